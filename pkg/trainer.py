"""Two-stage training: CLIP pretraining, then multi-teacher distillation."""
from __future__ import absolute_import, division, print_function

import math
from collections import OrderedDict

import attr
import numpy as np
import tensorflow as tf
from absl import logging
from tqdm import trange

from core import (ConfigError, EmptyInputError, KDWeights, Quadruplet, ShapeMismatchError,
                  TrainingDivergedError)
from data_input import DataInput, QuadrupletInput
from feature_store import read_shards
from models.losses import clip_loss, kd_loss
from utils.callbacks import CallbackList, LossHistory, TensorBoard
from utils.checkpoint import save_checkpoint

STAGES = ('pretrain', 'distill')
LR_DECAYS = ('constant', 'cosine')
LOSS_KEY = 'train/loss'


def _at_least(minimum):
    def check(instance, attribute, value):
        if value < minimum:
            raise ConfigError('%s must be >= %s, got %r' % (attribute.name, minimum, value))
    return check


@attr.s(frozen=True)
class TrainConfig(object):
    stage = attr.ib(validator=attr.validators.in_(STAGES))
    batch_size = attr.ib(converter=int, validator=_at_least(2))
    epochs = attr.ib(converter=int, validator=_at_least(0))
    lr = attr.ib(converter=float)
    weight_decay = attr.ib(default=0.0, converter=float, validator=_at_least(0.0))
    warmup_steps = attr.ib(default=0, converter=int, validator=_at_least(0))
    kd_weights = attr.ib(factory=KDWeights.default)
    seed = attr.ib(default=0, converter=int)
    lr_decay = attr.ib(default='constant', validator=attr.validators.in_(LR_DECAYS))
    reduction = attr.ib(default='mean', validator=attr.validators.in_(('mean', 'sum')))
    nan_restarts = attr.ib(default=3, converter=int)
    prefetch_depth = attr.ib(default=0, converter=int)
    log_dir = attr.ib(default=None)

    @lr.validator
    def _check_lr(self, attribute, value):
        if not (math.isfinite(value) and value > 0):
            raise ConfigError('lr must be a positive finite number, got %r' % value)

    @classmethod
    def from_config(cls, config, stage, **overrides):
        if stage not in STAGES:
            raise ConfigError('unknown stage %r' % stage)
        options = dict(stage=stage,
                       batch_size=getattr(config, stage + '_batch_size'),
                       epochs=getattr(config, stage + '_epochs'),
                       lr=getattr(config, stage + '_lr'),
                       weight_decay=config.weight_decay,
                       warmup_steps=getattr(config, stage + '_warmup_steps'),
                       kd_weights=KDWeights(*config.kd_weights),
                       seed=config.seed, lr_decay=config.lr_decay,
                       reduction=config.loss_reduction,
                       nan_restarts=config.nan_restarts,
                       prefetch_depth=config.prefetch_depth,
                       log_dir=config.log_dir)
        options.update(overrides)
        return cls(**options)


class WarmupSchedule(tf.keras.optimizers.schedules.LearningRateSchedule):
    """lr * s / warmup_steps for s < warmup_steps, then constant or cosine decay."""

    def __init__(self, lr, warmup_steps=0, total_steps=0, decay='constant'):
        super(WarmupSchedule, self).__init__()
        if decay not in LR_DECAYS:
            raise ConfigError('lr decay must be one of %s' % (LR_DECAYS,))
        self.lr = float(lr)
        self.warmup_steps = int(warmup_steps)
        self.total_steps = int(total_steps)
        self.decay = decay

    def __call__(self, step):
        step = tf.cast(step, tf.float64)
        lr = tf.constant(self.lr, tf.float64)
        if self.decay == 'cosine':
            span = float(max(1, self.total_steps - self.warmup_steps))
            progress = tf.clip_by_value((step - self.warmup_steps) / span, 0.0, 1.0)
            after = 0.5 * lr * (1.0 + tf.cos(math.pi * progress))
        else:
            after = lr
        if self.warmup_steps > 0:
            value = tf.where(step < self.warmup_steps, lr * step / self.warmup_steps, after)
        else:
            value = after
        return tf.cast(value, tf.float32)

    def get_config(self):
        return {'lr': self.lr, 'warmup_steps': self.warmup_steps,
                'total_steps': self.total_steps, 'decay': self.decay}


def make_optimizer(student, train_config, total_steps):
    schedule = WarmupSchedule(train_config.lr, train_config.warmup_steps, total_steps,
                              train_config.lr_decay)
    optimizer = tf.keras.optimizers.AdamW(learning_rate=schedule,
                                          weight_decay=train_config.weight_decay)
    optimizer.exclude_from_weight_decay(var_list=[student.temperature.log_tau])
    optimizer.build(student.trainable_variables)
    return optimizer


@attr.s
class TrainResult(object):
    loss_curve = attr.ib(factory=list)
    step_logs = attr.ib(factory=list)
    steps = attr.ib(default=0)
    checkpoint = attr.ib(default=None)
    history = attr.ib(default=None)

    @property
    def initial_loss(self):
        return self.loss_curve[0] if self.loss_curve else None

    @property
    def final_loss(self):
        return self.loss_curve[-1] if self.loss_curve else None

    def smoothed(self, window=5):
        curve = np.asarray(self.loss_curve, dtype=np.float64)
        if curve.size == 0:
            return curve
        window = min(window, curve.size)
        return np.convolve(curve, np.ones(window) / window, mode='valid')


class _Snapshot(object):
    """In-memory copy of model and optimizer variables at an epoch start."""

    def __init__(self, variables, optimizer):
        self.variables = list(variables)
        self.optimizer = optimizer
        self.values = [v.numpy() for v in self.variables]
        self.optimizer_values = [v.numpy() for v in optimizer.variables]

    def restore(self):
        for variable, value in zip(self.variables, self.values):
            variable.assign(value)
        for variable, value in zip(self.optimizer.variables, self.optimizer_values):
            variable.assign(value)


def _floats(named):
    return OrderedDict((k, float(v)) for k, v in named.items())


def _fit(student, data_input, train_step, train_config, save_path=None, config=None,
         description='train'):
    """Epoch loop shared by both stages; returns a TrainResult."""
    variables = student.trainable_variables
    history = LossHistory(LOSS_KEY)
    tensorboard = None
    if train_config.log_dir:
        tensorboard = TensorBoard(log_dir=train_config.log_dir,
                                  n_batches=data_input.train_epoch_size)
    callbacks = CallbackList([history, tensorboard])
    generator = data_input.batches(True)
    restarts = 0
    epoch = 0
    try:
        while epoch < train_config.epochs:
            callbacks.on_epoch_begin(epoch)
            snapshot = _Snapshot(variables, train_step.optimizer)
            t = trange(data_input.train_epoch_size, dynamic_ncols=True)
            t.set_description('| %s | ep: %d |' % (description, epoch))
            loss_sum = 0.0
            diverged = False
            for batch_index in t:
                callbacks.on_batch_begin(batch_index)
                batch = next(generator)
                logs = OrderedDict(('train/%s' % k, v) for k, v in
                                   _floats(train_step(batch)).items())

                # Check for a bad minimum, leading to nan weights
                if not all(np.isfinite(v) for v in logs.values()):
                    for log_key, log_val in logs.items():
                        if not np.isfinite(log_val):
                            logging.warning('nans found in %s', log_key)
                    diverged = True
                    break

                loss_sum += logs[LOSS_KEY]
                t.set_postfix(loss='%.2e' % (loss_sum / (batch_index + 1)))
                callbacks.on_batch_end(batch_index, logs)

            if diverged:
                restarts += 1
                if restarts > train_config.nan_restarts:
                    raise TrainingDivergedError(
                        '%s diverged at epoch %d after %d restarts' % (description, epoch,
                                                                     restarts - 1))
                logging.warning('restarting epoch %d', epoch)
                history.discard_epoch()
                snapshot.restore()
                continue

            callbacks.on_epoch_end(epoch, {LOSS_KEY: loss_sum / max(1, data_input.train_epoch_size)})
            epoch += 1
    finally:
        if hasattr(generator, 'close'):
            generator.close()
        if tensorboard is not None:
            tensorboard.on_train_end()

    if save_path is not None:
        save_checkpoint(save_path, student.checkpoint_groups(), config)
    logging.info('%s finished: %d epochs, %d steps', description, train_config.epochs,
                 len(history.steps))
    return TrainResult(loss_curve=history.epoch_losses, step_logs=history.steps,
                       steps=len(history.steps), checkpoint=save_path, history=history)


def _apply(optimizer, grads, variables):
    optimizer.apply_gradients([(g, v) for g, v in zip(grads, variables) if g is not None])


def pretrain(student, corpus, train_config, save_path=None, config=None):
    """Stage 1: CLIP loss on image-text pairs."""
    if train_config.stage != 'pretrain':
        raise ConfigError('pretrain needs a pretrain TrainConfig')
    data_input = DataInput(corpus, train_config.batch_size, train_config.seed,
                           train_config.prefetch_depth)
    optimizer = make_optimizer(student, train_config,
                               train_config.epochs * data_input.train_epoch_size)
    variables = student.trainable_variables
    reduction = train_config.reduction

    @tf.function
    def step(images, tokens):
        with tf.GradientTape() as tape:
            v = student.image_encoder(images, training=True)
            t = student.text_encoder(tokens, training=True)
            loss = clip_loss(v, t, student.temperature, reduction)
        _apply(optimizer, tape.gradient(loss.value, variables), variables)
        return OrderedDict([('loss', loss.value), ('i2t', loss.components['i2t']),
                            ('t2i', loss.components['t2i']),
                            ('tau', student.temperature.value())])

    def train_step(batch):
        return step(batch.images, batch.tokens)
    train_step.optimizer = optimizer

    return _fit(student, data_input, train_step, train_config,
                save_path=save_path, config=config, description='pretrain')


def _load_quadruplets(quadruplets):
    if isinstance(quadruplets, str):
        quadruplets = [quadruplets]
    quadruplets = list(quadruplets)
    if quadruplets and not isinstance(quadruplets[0], Quadruplet):
        quadruplets = list(read_shards(quadruplets))
    if not quadruplets:
        raise EmptyInputError('no quadruplets to distill from')
    return quadruplets


def distill(student, quadruplets, corpus, train_config, save_path=None, config=None):
    """Stage 2: weighted CLIP + FD + ICL loss against trusted-teacher features.

    quadruplets: Quadruplet objects or shard paths. Each epoch visits every
    distillable pair once with one of its trusted teachers drawn uniformly.
    """
    if train_config.stage != 'distill':
        raise ConfigError('distill needs a distill TrainConfig')
    quadruplets = _load_quadruplets(quadruplets)
    if quadruplets[0].dim != student.output_dim:
        raise ShapeMismatchError('quadruplets are %d-d, student emits %d-d' % (
            quadruplets[0].dim, student.output_dim))
    data_input = QuadrupletInput(corpus, quadruplets, train_config.batch_size, train_config.seed,
                                 train_config.prefetch_depth)
    optimizer = make_optimizer(student, train_config,
                               train_config.epochs * data_input.train_epoch_size)
    variables = student.trainable_variables
    weights = train_config.kd_weights
    reduction = train_config.reduction

    @tf.function
    def step(images, tokens, teacher_images, teacher_texts):
        with tf.GradientTape() as tape:
            v = student.image_encoder(images, training=True)
            t = student.text_encoder(tokens, training=True)
            loss = kd_loss(v, t, teacher_images, teacher_texts, student.temperature, weights,
                           reduction)
        _apply(optimizer, tape.gradient(loss.value, variables), variables)
        logs = OrderedDict([('loss', loss.value)])
        logs.update(loss.components)
        return logs

    def train_step(batch):
        return step(batch.images, batch.tokens, batch.teacher_images, batch.teacher_texts)
    train_step.optimizer = optimizer

    return _fit(student, data_input, train_step, train_config,
                save_path=save_path, config=config, description='distill')


def teacher_agreement(student, images, tokens, teacher_images, teacher_texts):
    """Mean cosine between student and teacher features over both streams."""
    v = student.encode_images(images)
    t = student.encode_tokens(tokens)
    teacher_images = np.asarray(teacher_images)
    teacher_texts = np.asarray(teacher_texts)
    if v.shape != teacher_images.shape or t.shape != teacher_texts.shape:
        raise ShapeMismatchError('student features %s do not match teacher features %s' % (
            v.shape, teacher_images.shape))

    def cosines(a, b):
        return np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return float(0.5 * (np.mean(cosines(v, teacher_images)) + np.mean(cosines(t, teacher_texts))))


def heldout_fd(student, images, tokens, teacher_images, teacher_texts):
    """Per-sample mean of ||v_S - v_T||^2 + ||t_S - t_T||^2."""
    v = student.encode_images(images)
    t = student.encode_tokens(tokens)
    return float(np.mean(np.sum(np.square(v - teacher_images), axis=1) +
                         np.sum(np.square(t - teacher_texts), axis=1)))
