"""Domain types shared by every stage of the distillation pipeline.

Everything here is an immutable value object except `Temperature`, which
wraps the single trainable scalar shared by the contrastive losses.
"""
from __future__ import annotations

import math

import attr
import numpy as np
import tensorflow as tf

DEFAULT_DIM = 512
MAX_TEXT_LEN = 512
TAU_INIT = 0.07
TAU_MIN = 1e-3
TAU_MAX = 100.0
DEFAULT_KD_WEIGHTS = (0.1, 50.0, 1.0)
# Alignment stage whose output the student is distilled against
DISTILL_TARGETS = ('projector', 'autoencoded')


class MMKDError(Exception):
    """Root of every error raised by this package."""


class ShapeMismatchError(MMKDError, ValueError):
    pass


class NonFiniteError(MMKDError, ValueError):
    pass


class ZeroNormError(MMKDError, ValueError):
    pass


class TemperatureRangeError(MMKDError, ValueError):
    pass


class ConfigError(MMKDError, ValueError):
    pass


class UnknownTeacherError(MMKDError, KeyError):
    pass


class CorpusTooSmallError(MMKDError, ValueError):
    pass


class EmptyInputError(MMKDError, ValueError):
    pass


class MetricUndefinedError(MMKDError, ValueError):
    pass


class NoEventsError(MMKDError, ValueError):
    pass


class TrainingDivergedError(MMKDError, RuntimeError):
    pass


class FeatureStoreError(MMKDError, IOError):
    pass


class BadMagicError(FeatureStoreError):
    pass


class TruncatedShardError(FeatureStoreError):
    pass


class CountMismatchError(FeatureStoreError):
    pass


class ManifestError(FeatureStoreError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = 'line %d: %s' % (line_number, message)
        super(ManifestError, self).__init__(message)
        self.line_number = line_number


class StageError(MMKDError, RuntimeError):
    def __init__(self, stage, cause):
        super(StageError, self).__init__('[%s] %s' % (stage, cause))
        self.stage = stage
        self.cause = cause


def _frozen_vector(values):
    arr = np.array(values, copy=True)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    arr.setflags(write=False)
    return arr


@attr.s(frozen=True, eq=False, repr=False)
class Embedding(object):
    """Fixed-dimension real vector; the unit of all similarity computation."""
    values = attr.ib(converter=_frozen_vector)
    dim = attr.ib()

    @dim.default
    def _dim_default(self):
        return int(self.values.shape[0]) if self.values.ndim == 1 else -1

    @values.validator
    def _check_values(self, attribute, value):
        if value.ndim != 1:
            raise ShapeMismatchError('embedding must be a vector, got shape %s' % (value.shape,))
        if not np.all(np.isfinite(value)):
            raise NonFiniteError('embedding has non-finite entries')

    @dim.validator
    def _check_dim(self, attribute, value):
        if value <= 0 or value != self.values.shape[0]:
            raise ShapeMismatchError('dim %d does not match %d values' % (value, self.values.shape[0]))

    @property
    def norm(self):
        return float(np.linalg.norm(self.values))

    def cosine(self, other):
        other = other.values if isinstance(other, Embedding) else np.asarray(other)
        return float(np.dot(self.values, other) / (self.norm * np.linalg.norm(other)))

    def __len__(self):
        return self.dim

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __repr__(self):
        return 'Embedding(dim=%d, norm=%.6f)' % (self.dim, self.norm)


def normalize(vector):
    """L2-normalizes a finite, non-zero vector into an `Embedding`."""
    arr = np.asarray(vector.values if isinstance(vector, Embedding) else vector)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise ShapeMismatchError('normalize expects a non-empty vector, got shape %s' % (arr.shape,))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError('cannot normalize a vector with non-finite entries')
    norm = np.linalg.norm(arr)
    if norm == 0.0:
        raise ZeroNormError('cannot normalize a zero-norm vector')
    return Embedding(arr / norm)


def normalize_rows(matrix):
    """Row-wise `normalize` for a 2-D array; returns a plain array."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ShapeMismatchError('expected a matrix, got shape %s' % (matrix.shape,))
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteError('cannot normalize rows with non-finite entries')
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroNormError('cannot normalize a zero-norm row')
    return matrix / norms


def stack_embeddings(embeddings):
    if len(embeddings) == 0:
        raise EmptyInputError('no embeddings to stack')
    dims = set(e.dim for e in embeddings)
    if len(dims) != 1:
        raise ShapeMismatchError('embeddings have mixed dims %s' % sorted(dims))
    return np.stack([e.values for e in embeddings])


def _check_image(instance, attribute, value):
    if value.ndim != 3:
        raise ShapeMismatchError('image must be HxWxC, got shape %s' % (value.shape,))
    if value.size and (value.min() < 0.0 or value.max() > 1.0):
        raise ValueError('image values must lie in [0, 1]')


def _check_tokens(instance, attribute, value):
    if value.ndim != 1 or not np.any(value != 0):
        raise EmptyInputError('token sequence is empty')
    if value.shape[0] > MAX_TEXT_LEN:
        raise ShapeMismatchError('token sequence longer than %d' % MAX_TEXT_LEN)


@attr.s(frozen=True, eq=False)
class ImageTextPair(object):
    image_id = attr.ib(converter=int)
    text_id = attr.ib(converter=int)
    image = attr.ib(converter=np.asarray, validator=_check_image)
    text = attr.ib(converter=lambda t: np.asarray(t, dtype=np.int32), validator=_check_tokens)
    caption = attr.ib(default=None)

    @property
    def key(self):
        return (self.image_id, self.text_id)


@attr.s(frozen=True, eq=False)
class Quadruplet(object):
    """One offline distillation sample: a pair plus one teacher's features."""
    image_id = attr.ib(converter=int)
    text_id = attr.ib(converter=int)
    teacher_id = attr.ib(converter=int)
    teacher_image_feature = attr.ib(validator=attr.validators.instance_of(Embedding))
    teacher_text_feature = attr.ib(validator=attr.validators.instance_of(Embedding))

    def __attrs_post_init__(self):
        if self.teacher_image_feature.dim != self.teacher_text_feature.dim:
            raise ShapeMismatchError('teacher image/text features differ in dim (%d vs %d)' % (
                self.teacher_image_feature.dim, self.teacher_text_feature.dim))

    @property
    def key(self):
        return (self.image_id, self.text_id)

    @property
    def dim(self):
        return self.teacher_image_feature.dim


@attr.s(frozen=True, eq=False)
class Batch(object):
    """Columnar mini-batch. Teacher columns are None during pretraining."""
    indices = attr.ib(converter=np.asarray)
    images = attr.ib(converter=np.asarray)
    tokens = attr.ib(converter=np.asarray)
    teacher_images = attr.ib(default=None)
    teacher_texts = attr.ib(default=None)

    def __attrs_post_init__(self):
        size = self.indices.shape[0]
        if size < 1:
            raise EmptyInputError('batch must hold at least one item')
        columns = [self.images, self.tokens, self.teacher_images, self.teacher_texts]
        for column in columns:
            if column is not None and np.shape(column)[0] != size:
                raise ShapeMismatchError('batch columns disagree on size')

    @property
    def size(self):
        return int(self.indices.shape[0])

    @property
    def has_teacher(self):
        return self.teacher_images is not None


def _nonneg_finite(instance, attribute, value):
    if not math.isfinite(value) or value < 0:
        raise ConfigError('%s must be finite and >= 0, got %r' % (attribute.name, value))


@attr.s(frozen=True)
class KDWeights(object):
    alpha1 = attr.ib(converter=float, validator=_nonneg_finite)
    alpha2 = attr.ib(converter=float, validator=_nonneg_finite)
    alpha3 = attr.ib(converter=float, validator=_nonneg_finite)

    @classmethod
    def default(cls):
        return cls(*DEFAULT_KD_WEIGHTS)

    def as_tuple(self):
        return (self.alpha1, self.alpha2, self.alpha3)


class Temperature(tf.keras.layers.Layer):
    """Learnable softmax temperature stored in log space.

    tau = exp(log_tau), clamped to [TAU_MIN, TAU_MAX] on read.
    """

    def __init__(self, init=TAU_INIT, **kwargs):
        super(Temperature, self).__init__(**kwargs)
        if not TAU_MIN <= init <= TAU_MAX:
            raise TemperatureRangeError('initial tau %r outside [%g, %g]' % (init, TAU_MIN, TAU_MAX))
        self.init = float(init)
        self.log_tau = self.add_weight(name='log_tau', shape=(),
                                       initializer=tf.keras.initializers.Constant(math.log(init)),
                                       trainable=True)

    def value(self, dtype=None):
        tau = tf.clip_by_value(tf.exp(self.log_tau), TAU_MIN, TAU_MAX)
        return tau if dtype is None else tf.cast(tau, dtype)

    def call(self, inputs):
        return inputs / self.value(inputs.dtype)

    def get_config(self):
        config = {'init': self.init}
        base_config = super(Temperature, self).get_config()
        return dict(list(base_config.items()) + list(config.items()))
