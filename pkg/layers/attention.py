import attr
import numpy as np
import tensorflow as tf


@attr.s(frozen=True)
class AttentionParams(object):
    """Attention weights in matrix form: scores = w . tanh(V h) [* sigmoid(U h)]."""
    V = attr.ib(converter=np.asarray)
    w = attr.ib(converter=np.asarray)
    U = attr.ib(default=None)

    @property
    def gated(self):
        return self.U is not None


class AttentionPooling(tf.keras.layers.Layer):
    """Attention-based MIL pooling over the instance axis.

    Inputs are [instances (B, K, d), mask (B, K)]; padded instances get zero
    weight. Returns (bag embeddings (B, d), weights (B, K)).
    """

    def __init__(self, attention_dim=64, gated=False, seed=0, **kwargs):
        super(AttentionPooling, self).__init__(**kwargs)
        self.attention_dim = attention_dim
        self.gated = gated
        self.seed = seed
        init = tf.keras.initializers.GlorotUniform
        self.attention_V = tf.keras.layers.Dense(attention_dim, activation='tanh', use_bias=False,
                                                 kernel_initializer=init(seed=seed), name='attention_V')
        self.attention_w = tf.keras.layers.Dense(1, use_bias=False,
                                                 kernel_initializer=init(seed=seed + 1), name='attention_w')
        if gated:
            self.attention_U = tf.keras.layers.Dense(attention_dim, activation='sigmoid', use_bias=False,
                                                     kernel_initializer=init(seed=seed + 2),
                                                     name='attention_U')

    def call(self, inputs):
        instances, mask = inputs
        hidden = self.attention_V(instances)
        if self.gated:
            hidden = hidden * self.attention_U(instances)
        scores = tf.squeeze(self.attention_w(hidden), axis=-1)
        mask = tf.cast(mask, scores.dtype)
        scores = scores + (1.0 - mask) * tf.constant(-1e9, scores.dtype)
        weights = tf.nn.softmax(scores, axis=1) * mask
        weights = weights / tf.reduce_sum(weights, axis=1, keepdims=True)
        bags = tf.einsum('bk,bkd->bd', weights, instances)
        return bags, weights

    def params(self):
        return AttentionParams(
            V=self.attention_V.kernel.numpy().T,
            w=self.attention_w.kernel.numpy()[:, 0],
            U=self.attention_U.kernel.numpy().T if self.gated else None)

    def get_config(self):
        config = {'attention_dim': self.attention_dim, 'gated': self.gated, 'seed': self.seed}
        base_config = super(AttentionPooling, self).get_config()
        return dict(list(base_config.items()) + list(config.items()))
