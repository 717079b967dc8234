from __future__ import absolute_import, division, print_function

import itertools
from collections import OrderedDict

import attr
import numpy as np
import tensorflow as tf
from absl import logging
from tqdm import trange

from core import (DEFAULT_DIM, DISTILL_TARGETS, Embedding, EmptyInputError, ShapeMismatchError,
                  TrainingDivergedError, UnknownTeacherError, ZeroNormError, normalize)
from layers.normalization import L2Normalization

STREAMS = ('image', 'text')
UNIT_NORM_TOL = 1e-3


class StreamAutoencoder(tf.keras.layers.Layer):
    """joint_dim -> latent_dim -> joint_dim, shared by every teacher of one stream."""

    def __init__(self, joint_dim, latent_dim, seed=0, **kwargs):
        super(StreamAutoencoder, self).__init__(**kwargs)
        self.joint_dim = joint_dim
        self.latent_dim = latent_dim
        init = tf.keras.initializers.GlorotUniform
        self.encoder = tf.keras.layers.Dense(latent_dim, activation='gelu',
                                             kernel_initializer=init(seed=seed), name='latent')
        self.decoder = tf.keras.layers.Dense(joint_dim, kernel_initializer=init(seed=seed + 1),
                                             name='joint')

    def call(self, inputs):
        return self.decoder(self.encoder(inputs))

    def get_config(self):
        config = {'joint_dim': self.joint_dim, 'latent_dim': self.latent_dim}
        base_config = super(StreamAutoencoder, self).get_config()
        return dict(list(base_config.items()) + list(config.items()))


class AlignmentModel(tf.keras.Model):
    """Per-teacher projection encoders/decoders around two shared stream autoencoders.

    encode:   x (native) -> tanh(P x) -> L2 normalize          (joint_dim, default target)
    shared:   -> stream autoencoder                             (joint_dim)
    joint:    -> L2 normalize                                   ('autoencoded' target)
    decode:   shared output -> D_teacher                        (native)
    """

    def __init__(self, native_dims, joint_dim=DEFAULT_DIM, latent_dim=256, seed=0, **kwargs):
        super(AlignmentModel, self).__init__(name=kwargs.pop('name', 'alignment'), **kwargs)
        if not native_dims:
            raise EmptyInputError('alignment needs at least one teacher')
        self.native_dims = OrderedDict(sorted((int(k), int(v)) for k, v in native_dims.items()))
        self.joint_dim = joint_dim
        self.latent_dim = latent_dim
        self.seed = seed
        init = tf.keras.initializers.GlorotUniform
        self.projectors = {}
        self.decoders = {}
        n = 0
        for teacher_id, native_dim in self.native_dims.items():
            # both streams of a teacher share one init
            for stream in STREAMS:
                key = self._key(stream, teacher_id)
                self.projectors[key] = tf.keras.layers.Dense(
                    joint_dim, activation='tanh', kernel_initializer=init(seed=seed * 1000 + n),
                    name='encoder_' + key)
                self.decoders[key] = tf.keras.layers.Dense(
                    native_dim, kernel_initializer=init(seed=seed * 1000 + n + 1),
                    name='decoder_' + key)
            n += 2
        self.autoencoders = {
            stream: StreamAutoencoder(joint_dim, latent_dim, seed=seed * 1000 + n + 10 * i,
                                      name='autoencoder_' + stream)
            for i, stream in enumerate(STREAMS)}
        self.l2_norm = L2Normalization()
        for teacher_id, native_dim in self.native_dims.items():
            for stream in STREAMS:
                self.reconstruct(teacher_id, tf.zeros([1, native_dim]), stream)

    @staticmethod
    def _key(stream, teacher_id):
        return '%s_%d' % (stream, teacher_id)

    def _check(self, teacher_id, stream):
        if stream not in STREAMS:
            raise ValueError('stream must be image or text, got %r' % stream)
        if int(teacher_id) not in self.native_dims:
            raise UnknownTeacherError('teacher %r is not registered with the alignment model' % teacher_id)
        return self._key(stream, int(teacher_id))

    def encode(self, teacher_id, features, stream):
        return self.l2_norm(self.projectors[self._check(teacher_id, stream)](features))

    def shared(self, teacher_id, features, stream):
        return self.autoencoders[stream](self.encode(teacher_id, features, stream))

    def joint(self, teacher_id, features, stream):
        return self.l2_norm(self.shared(teacher_id, features, stream))

    def target(self, teacher_id, features, stream, target='projector'):
        if target == 'projector':
            return self.encode(teacher_id, features, stream)
        if target == 'autoencoded':
            return self.joint(teacher_id, features, stream)
        raise ValueError('target must be one of %s, got %r' % (DISTILL_TARGETS, target))

    def reconstruct(self, teacher_id, features, stream, target_id=None):
        """Decodes into `target_id`'s native space (the source teacher by default)."""
        target_id = teacher_id if target_id is None else target_id
        key = self._check(target_id, stream)
        return self.decoders[key](self.shared(teacher_id, features, stream))

    def call(self, inputs):
        teacher_id, features, stream = inputs
        return self.target(teacher_id, features, stream)


def _checked_feature(model, teacher_id, feature, stream):
    model._check(teacher_id, stream)
    values = feature.values if isinstance(feature, Embedding) else np.asarray(feature)
    if values.ndim != 1 or values.shape[0] != model.native_dims[int(teacher_id)]:
        raise ShapeMismatchError('teacher %d expects %d-d features, got shape %s' % (
            teacher_id, model.native_dims[int(teacher_id)], values.shape))
    norm = np.linalg.norm(values)
    if norm == 0.0:
        raise ZeroNormError('teacher features must be unit-norm, got a zero vector')
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise ValueError('teacher features must be unit-norm, got norm %.6f' % norm)
    return values[np.newaxis].astype(np.float32)


def project(model, teacher_id, feature, stream, target='projector'):
    """Distillation target for one teacher feature: the unit-norm projector output,
    or the shared autoencoder output when target='autoencoded'."""
    x = _checked_feature(model, teacher_id, feature, stream)
    return normalize(model.target(teacher_id, x, stream, target).numpy()[0].astype(np.float64))


def reconstruct(model, teacher_id, feature, stream):
    x = _checked_feature(model, teacher_id, feature, stream)
    return Embedding(model.reconstruct(teacher_id, x, stream).numpy()[0])


def joint_features(model, teacher_id, features, stream, target='projector', batch_size=512):
    """Batch `project` for an [n, native_dim] array; returns [n, joint_dim]."""
    model._check(teacher_id, stream)
    if target not in DISTILL_TARGETS:
        raise ValueError('target must be one of %s, got %r' % (DISTILL_TARGETS, target))
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[1] != model.native_dims[int(teacher_id)]:
        raise ShapeMismatchError('teacher %d expects [n, %d] features, got %s' % (
            teacher_id, model.native_dims[int(teacher_id)], features.shape))
    outputs = [model.target(teacher_id, features[i:i + batch_size], stream, target).numpy()
               for i in range(0, features.shape[0], batch_size)]
    if not outputs:
        return np.zeros([0, model.joint_dim], dtype=np.float32)
    return np.concatenate(outputs, axis=0)


@attr.s(frozen=True)
class TeacherFeatures(object):
    """Native features of one teacher: [n, native_dim] per stream plus sample ids."""
    image = attr.ib(converter=lambda x: np.asarray(x, dtype=np.float32))
    text = attr.ib(converter=lambda x: np.asarray(x, dtype=np.float32))
    sample_ids = attr.ib(default=None)

    def __attrs_post_init__(self):
        if self.image.shape != self.text.shape:
            raise ShapeMismatchError('image and text features must have the same shape')
        if self.sample_ids is None:
            object.__setattr__(self, 'sample_ids', np.arange(self.image.shape[0]))
        else:
            object.__setattr__(self, 'sample_ids', np.asarray(self.sample_ids))

    def __len__(self):
        return int(self.image.shape[0])


@attr.s
class AlignmentLog(object):
    """epoch_losses[0] is the loss before any update."""
    epoch_losses = attr.ib(factory=list)
    components = attr.ib(factory=list)

    @property
    def initial(self):
        return self.epoch_losses[0]

    @property
    def final(self):
        return self.epoch_losses[-1]


def _sse(a, b):
    return tf.reduce_mean(tf.reduce_sum(tf.square(a - b), axis=1))


def alignment_loss_terms(model, batch, cross_weight=0.5):
    """Named reconstruction terms for one batch.

    batch: {'self': {teacher_id: {stream: [b, native]}}} for self terms, plus an
    optional 'common' entry of the same form whose rows are the same samples
    for every teacher (cross-teacher terms).
    """
    terms = OrderedDict()
    own = batch['self']
    for teacher_id in model.native_dims:
        if teacher_id not in own:
            continue
        for stream in STREAMS:
            x = own[teacher_id][stream]
            terms['rec_%s_%d' % (stream, teacher_id)] = _sse(model.reconstruct(teacher_id, x, stream), x)
    common = batch.get('common')
    if common and cross_weight > 0:
        for a, b in itertools.permutations(sorted(common.keys()), 2):
            for stream in STREAMS:
                out = model.reconstruct(a, common[a][stream], stream, target_id=b)
                terms['cross_rec_%s_%d_%d' % (stream, a, b)] = cross_weight * _sse(
                    out, common[b][stream])
    return terms


def _common_rows(features):
    if len(features) < 2:
        return None
    ids = None
    for f in features.values():
        ids = set(f.sample_ids.tolist()) if ids is None else ids & set(f.sample_ids.tolist())
    ids = np.array(sorted(ids))
    if ids.shape[0] == 0:
        return None
    rows = {}
    for teacher_id, f in features.items():
        lookup = dict((int(s), r) for r, s in enumerate(f.sample_ids))
        rows[teacher_id] = np.array([lookup[int(s)] for s in ids])
    return rows


def _full_batch(features, common_rows):
    batch = {'self': dict((t, {'image': tf.constant(f.image), 'text': tf.constant(f.text)})
                          for t, f in features.items())}
    if common_rows is not None:
        batch['common'] = dict(
            (t, {'image': tf.constant(features[t].image[r]), 'text': tf.constant(features[t].text[r])})
            for t, r in common_rows.items())
    return batch


def reconstruction_error(model, features):
    """Mean per-vector squared error per (teacher, stream) with no cross terms."""
    errors = OrderedDict()
    for teacher_id, f in features.items():
        for stream in STREAMS:
            x = tf.constant(getattr(f, stream))
            errors['%s_%d' % (stream, teacher_id)] = float(_sse(model.reconstruct(teacher_id, x, stream), x))
    return errors


def train_alignment(model, features, epochs, lr, batch_size=64, cross_weight=0.5, seed=0,
                    verbose=True):
    """Reconstruction-only training of the alignment model.

    features: {teacher_id: TeacherFeatures}. Returns an AlignmentLog whose
    first entry is the full-data loss before training.
    """
    features = OrderedDict((int(k), v) for k, v in sorted(features.items()))
    for teacher_id, f in features.items():
        model._check(teacher_id, 'image')
        if f.image.shape[1] != model.native_dims[teacher_id]:
            raise ShapeMismatchError('teacher %d features are %d-d, expected %d' % (
                teacher_id, f.image.shape[1], model.native_dims[teacher_id]))
        if len(f) == 0:
            raise EmptyInputError('teacher %d has no features' % teacher_id)
    common_rows = _common_rows(features)

    def full_loss():
        terms = alignment_loss_terms(model, _full_batch(features, common_rows), cross_weight)
        return float(tf.add_n(list(terms.values()))), terms

    log = AlignmentLog()
    initial, terms = full_loss()
    log.epoch_losses.append(initial)
    log.components.append(OrderedDict((k, float(v)) for k, v in terms.items()))
    if epochs <= 0:
        return log

    optimizer = tf.keras.optimizers.Adam(learning_rate=lr)
    sizes = dict((t, min(batch_size, len(f))) for t, f in features.items())
    n_common = len(next(iter(common_rows.values()))) if common_rows else 0
    common_size = min(batch_size, n_common)
    steps = int(np.ceil(max(len(f) for f in features.values()) / float(batch_size)))

    @tf.function
    def train_step(batch):
        with tf.GradientTape() as tape:
            terms = alignment_loss_terms(model, batch, cross_weight)
            loss = tf.add_n(list(terms.values()))
        grads = tape.gradient(loss, model.trainable_variables)
        optimizer.apply_gradients([(g, v) for g, v in zip(grads, model.trainable_variables)
                                   if g is not None])
        return loss

    t = trange(epochs, disable=not verbose, dynamic_ncols=True)
    t.set_description('| align |')
    for epoch in t:
        rng = np.random.default_rng([seed, epoch])
        orders = dict((tid, rng.permutation(len(f))) for tid, f in features.items())
        common_order = rng.permutation(n_common) if common_rows else None
        loss_sum = 0.0
        for step in range(steps):
            batch = {'self': {}}
            for tid, f in features.items():
                rows = np.take(orders[tid], np.arange(step * sizes[tid], (step + 1) * sizes[tid]),
                               mode='wrap')
                batch['self'][tid] = {'image': f.image[rows], 'text': f.text[rows]}
            if common_rows:
                picks = np.take(common_order, np.arange(step * common_size, (step + 1) * common_size),
                                mode='wrap')
                batch['common'] = dict(
                    (tid, {'image': features[tid].image[r[picks]], 'text': features[tid].text[r[picks]]})
                    for tid, r in common_rows.items())
            loss_sum += float(train_step(batch))
            t.set_postfix(loss='%.3e' % (loss_sum / (step + 1)))
        epoch_loss, terms = full_loss()
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError('alignment loss became non-finite at epoch %d' % epoch)
        log.epoch_losses.append(epoch_loss)
        log.components.append(OrderedDict((k, float(v)) for k, v in terms.items()))
    logging.info('alignment loss %.4f -> %.4f over %d epochs', log.initial, log.final, epochs)
    return log
