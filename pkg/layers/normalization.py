import tensorflow as tf


class L2Normalization(tf.keras.layers.Layer):
    """Scales each vector along `axis` to unit L2 norm.

    # Arguments
        axis: Integer, the axis that is normalized (the feature axis).
            Axis 0 is the batch dimension and cannot be normalized.
        epsilon: Floor on the squared norm, keeps the gradient finite at 0.
    # Input shape
        Arbitrary, rank >= 2.
    # Output shape
        Same shape as input.
    """
    def __init__(self, axis=-1, epsilon=1e-12, **kwargs):
        super(L2Normalization, self).__init__(**kwargs)
        if axis == 0:
            raise ValueError('Axis cannot be zero')
        self.axis = axis
        self.epsilon = epsilon

    def call(self, inputs):
        return tf.math.l2_normalize(inputs, axis=self.axis, epsilon=self.epsilon)

    def compute_output_shape(self, input_shape):
        return input_shape

    def get_config(self):
        config = {
            'axis': self.axis,
            'epsilon': self.epsilon,
        }
        base_config = super(L2Normalization, self).get_config()
        return dict(list(base_config.items()) + list(config.items()))
