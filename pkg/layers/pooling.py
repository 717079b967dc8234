import tensorflow as tf


class MaskedMeanPooling(tf.keras.layers.Layer):
    """Mean over the time axis of [embedded, token_ids], ignoring id 0."""

    def call(self, inputs):
        embedded, token_ids = inputs
        mask = tf.cast(tf.not_equal(token_ids, 0), embedded.dtype)[..., tf.newaxis]
        total = tf.reduce_sum(embedded * mask, axis=1)
        count = tf.maximum(tf.reduce_sum(mask, axis=1), tf.ones((), embedded.dtype))
        return total / count

    def compute_output_shape(self, input_shape):
        embedded_shape = input_shape[0]
        return (embedded_shape[0], embedded_shape[-1])
