"""Training objectives: CLIP, feature distillation, interactive contrastive
learning and their weighted KD composite.

All losses take [B, d] embedding matrices (or lists of `Embedding`) and
return a `LossValue` whose `value` is a scalar tensor, so they run inside
`tf.function` training steps.
"""
from __future__ import absolute_import, division, print_function

from collections import OrderedDict

import attr
import numpy as np
import tensorflow as tf

from core import (Embedding, KDWeights, ShapeMismatchError, Temperature, TemperatureRangeError,
                  TAU_MAX, TAU_MIN)

REDUCTIONS = ('mean', 'sum')


@attr.s(frozen=True)
class LossValue(object):
    value = attr.ib()
    components = attr.ib(factory=OrderedDict)

    def numpy(self):
        return float(self.value)

    def component_floats(self):
        return OrderedDict((k, float(v)) for k, v in self.components.items())


def _as_matrix(x, dtype=None):
    if isinstance(x, (list, tuple)) and len(x) and isinstance(x[0], Embedding):
        x = np.stack([e.values for e in x])
    x = tf.convert_to_tensor(x)
    if dtype is not None and x.dtype != dtype:
        x = tf.cast(x, dtype)
    if x.shape.rank != 2:
        raise ShapeMismatchError('expected a [batch, dim] matrix, got rank %s' % x.shape.rank)
    return x


def _check_same_shape(*matrices):
    shapes = [tuple(m.shape.as_list()) for m in matrices]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeMismatchError('embedding batches disagree in shape: %s' % shapes)


def _resolve_tau(tau, dtype):
    if isinstance(tau, Temperature):
        return tau.value(dtype)
    if isinstance(tau, (int, float, np.floating)):
        if not TAU_MIN <= float(tau) <= TAU_MAX:
            raise TemperatureRangeError('tau %r outside [%g, %g]' % (tau, TAU_MIN, TAU_MAX))
    return tf.cast(tau, dtype)


def _check_reduction(reduction):
    if reduction not in REDUCTIONS:
        raise ValueError('reduction must be one of %s' % (REDUCTIONS,))


def info_nce(queries, keys, tau, reduction='mean'):
    """-log softmax(q_i . k_b / tau)[i] over b, via log-sum-exp."""
    logits = tf.matmul(queries, keys, transpose_b=True) / tau
    per_row = tf.reduce_logsumexp(logits, axis=1) - tf.linalg.diag_part(logits)
    if reduction == 'sum':
        return tf.reduce_sum(per_row)
    return tf.reduce_mean(per_row)


def clip_loss(student_image, student_text, tau, reduction='mean'):
    _check_reduction(reduction)
    v = _as_matrix(student_image)
    t = _as_matrix(student_text, v.dtype)
    _check_same_shape(v, t)
    tau = _resolve_tau(tau, v.dtype)
    i2t = info_nce(v, t, tau, reduction)
    t2i = info_nce(t, v, tau, reduction)
    value = 0.5 * (i2t + t2i)
    return LossValue(value, OrderedDict([('i2t', i2t), ('t2i', t2i)]))


def fd_loss(student_image, student_text, teacher_image, teacher_text):
    """Batch mean of ||v_S - v_T||^2 + ||t_S - t_T||^2."""
    v = _as_matrix(student_image)
    t = _as_matrix(student_text, v.dtype)
    vt = tf.stop_gradient(_as_matrix(teacher_image, v.dtype))
    tt = tf.stop_gradient(_as_matrix(teacher_text, v.dtype))
    _check_same_shape(v, t, vt, tt)
    image_term = tf.reduce_sum(tf.square(v - vt), axis=1)
    text_term = tf.reduce_sum(tf.square(t - tt), axis=1)
    value = tf.reduce_mean(image_term + text_term)
    return LossValue(value, OrderedDict([('image', tf.reduce_mean(image_term)),
                                         ('text', tf.reduce_mean(text_term))]))


def icl_loss(student_image, student_text, teacher_image, teacher_text, tau, reduction='mean'):
    """Student queries against detached teacher keys of the other modality."""
    _check_reduction(reduction)
    v = _as_matrix(student_image)
    t = _as_matrix(student_text, v.dtype)
    vt = tf.stop_gradient(_as_matrix(teacher_image, v.dtype))
    tt = tf.stop_gradient(_as_matrix(teacher_text, v.dtype))
    _check_same_shape(v, t, vt, tt)
    tau = _resolve_tau(tau, v.dtype)
    i2t = info_nce(v, tt, tau, reduction)
    t2i = info_nce(t, vt, tau, reduction)
    value = 0.5 * (i2t + t2i)
    return LossValue(value, OrderedDict([('i2t', i2t), ('t2i', t2i)]))


def compose_kd(components, weights):
    """alpha1 * clip + alpha2 * fd + alpha3 * icl from named components."""
    a1, a2, a3 = weights.as_tuple()
    value = a1 * components['clip'] + a2 * components['fd'] + a3 * components['icl']
    return LossValue(value, OrderedDict((k, components[k]) for k in ('clip', 'fd', 'icl')))


def kd_loss(student_image, student_text, teacher_image, teacher_text, tau, weights=None,
            reduction='mean'):
    weights = weights or KDWeights.default()
    components = OrderedDict([
        ('clip', clip_loss(student_image, student_text, tau, reduction).value),
        ('fd', fd_loss(student_image, student_text, teacher_image, teacher_text).value),
        ('icl', icl_loss(student_image, student_text, teacher_image, teacher_text, tau,
                         reduction).value),
    ])
    return compose_kd(components, weights)
