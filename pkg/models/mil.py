from __future__ import absolute_import, division, print_function

import numpy as np
import tensorflow as tf

from core import EmptyInputError, ShapeMismatchError
from layers.attention import AttentionPooling


def pad_bags(bags, max_size=None):
    """Stacks variable-size bags into ([B, K, d] instances, [B, K] mask)."""
    if len(bags) == 0:
        raise EmptyInputError('no bags to pad')
    bags = [np.asarray(b, dtype=np.float32) for b in bags]
    dims = set(b.shape[1] for b in bags)
    if len(dims) != 1:
        raise ShapeMismatchError('bags have mixed instance dims %s' % sorted(dims))
    if any(b.shape[0] == 0 for b in bags):
        raise EmptyInputError('bags must hold at least one instance')
    max_size = max_size or max(b.shape[0] for b in bags)
    instances = np.zeros([len(bags), max_size, dims.pop()], dtype=np.float32)
    mask = np.zeros([len(bags), max_size], dtype=np.float32)
    for i, b in enumerate(bags):
        k = min(b.shape[0], max_size)
        instances[i, :k] = b[:k]
        mask[i, :k] = 1.0
    return instances, mask


class MILModel(tf.keras.Model):
    """ABMIL: instance projector, attention pooling, linear head.

    An optional report embedding is concatenated to the bag embedding before
    the head. The head starts at zero, so an untrained model scores every bag
    the same.
    """

    def __init__(self, n_outputs, instance_dim, hidden_dim=128, attention_dim=64, gated=False,
                 report_dim=0, seed=0, **kwargs):
        super(MILModel, self).__init__(name=kwargs.pop('name', 'abmil'), **kwargs)
        self.n_outputs = n_outputs
        self.instance_dim = instance_dim
        self.report_dim = report_dim
        init = tf.keras.initializers.GlorotUniform
        self.projector = tf.keras.layers.Dense(hidden_dim, activation='relu',
                                               kernel_initializer=init(seed=seed), name='projector')
        self.pooling = AttentionPooling(attention_dim, gated=gated, seed=seed + 10,
                                        name='attention_pooling')
        self.head = tf.keras.layers.Dense(n_outputs, kernel_initializer='zeros', name='head')
        inputs = [tf.zeros([1, 1, instance_dim]), tf.ones([1, 1])]
        if report_dim:
            inputs.append(tf.zeros([1, report_dim]))
        self(inputs)

    def attend(self, inputs):
        instances, mask = inputs[0], inputs[1]
        return self.pooling([self.projector(instances), mask])

    def call(self, inputs, training=False):
        bags, _ = self.attend(inputs)
        if self.report_dim:
            bags = tf.concat([bags, tf.cast(inputs[2], bags.dtype)], axis=1)
        return self.head(bags)
