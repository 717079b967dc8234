from __future__ import absolute_import, division, print_function

import attr
import numpy as np
import tensorflow as tf

from core import (ConfigError, DEFAULT_DIM, EmptyInputError, Embedding, ShapeMismatchError,
                  Temperature, TAU_INIT, normalize, normalize_rows)
from data_input import crc32
from layers.normalization import L2Normalization
from layers.pooling import MaskedMeanPooling

TEACHER_DIMS = (512, 768)


def _positive_dims(instance, attribute, value):
    if any(int(d) <= 0 for d in value):
        raise ConfigError('%s must hold positive integers' % attribute.name)


@attr.s(frozen=True)
class EncoderConfig(object):
    kind = attr.ib(validator=attr.validators.in_(('image', 'text')))
    hidden_dims = attr.ib(converter=tuple, validator=_positive_dims)
    output_dim = attr.ib(default=DEFAULT_DIM, converter=int)
    seed = attr.ib(default=0, converter=int)
    image_shape = attr.ib(default=(16, 16, 3), converter=tuple)
    conv_filters = attr.ib(default=(16, 32), converter=tuple, validator=_positive_dims)
    vocab_size = attr.ib(default=1024, converter=int)
    embed_width = attr.ib(default=128, converter=int)
    max_len = attr.ib(default=32, converter=int)
    dtype = attr.ib(default='float32')

    @output_dim.validator
    def _check_output_dim(self, attribute, value):
        if value <= 0:
            raise ConfigError('output_dim must be positive')


class _StudentEncoder(tf.keras.Model):
    def __init__(self, config, **kwargs):
        super(_StudentEncoder, self).__init__(**kwargs)
        self.config = config
        self._n_inits = 0

    def _init(self):
        self._n_inits += 1
        return tf.keras.initializers.GlorotUniform(seed=self.config.seed * 1000 + self._n_inits)

    def _dense(self, units, activation=None, name=None):
        return tf.keras.layers.Dense(units, activation=activation, kernel_initializer=self._init(),
                                     dtype=self.config.dtype, name=name)


class ImageEncoder(_StudentEncoder):
    """Shallow conv stack + MLP, L2-normalized output (visual student f)."""

    def __init__(self, config, **kwargs):
        super(ImageEncoder, self).__init__(config, name=kwargs.pop('name', 'image_encoder'), **kwargs)
        self.convs = [tf.keras.layers.Conv2D(filters, 3, strides=2, padding='same', activation='gelu',
                                             kernel_initializer=self._init(), dtype=config.dtype,
                                             name='conv_%d' % i)
                      for i, filters in enumerate(config.conv_filters)]
        self.flatten = tf.keras.layers.Flatten(dtype=config.dtype)
        self.hidden = [self._dense(units, 'gelu', name='hidden_%d' % i)
                       for i, units in enumerate(config.hidden_dims)]
        self.projection = self._dense(config.output_dim, name='projection')
        self.l2_norm = L2Normalization(dtype=config.dtype)
        self(tf.zeros((1,) + config.image_shape, dtype=config.dtype))

    def call(self, images, training=False):
        x = tf.cast(images, self.config.dtype)
        for conv in self.convs:
            x = conv(x)
        x = self.flatten(x)
        for dense in self.hidden:
            x = dense(x)
        return self.l2_norm(self.projection(x))


class TextEncoder(_StudentEncoder):
    """Token embedding, masked mean pooling, MLP; L2-normalized (text student g)."""

    def __init__(self, config, **kwargs):
        super(TextEncoder, self).__init__(config, name=kwargs.pop('name', 'text_encoder'), **kwargs)
        self.embedding = tf.keras.layers.Embedding(
            config.vocab_size, config.embed_width, dtype=config.dtype, name='token_embedding',
            embeddings_initializer=tf.keras.initializers.RandomNormal(
                stddev=1.0, seed=config.seed * 1000))
        self.pooling = MaskedMeanPooling(dtype=config.dtype)
        self.hidden = [self._dense(units, 'gelu', name='hidden_%d' % i)
                       for i, units in enumerate(config.hidden_dims)]
        self.projection = self._dense(config.output_dim, name='projection')
        self.l2_norm = L2Normalization(dtype=config.dtype)
        self(tf.ones((1, config.max_len), dtype=tf.int32))

    def call(self, tokens, training=False):
        x = self.pooling([self.embedding(tokens), tokens])
        for dense in self.hidden:
            x = dense(x)
        return self.l2_norm(self.projection(x))


def _check_image_shape(encoder, images):
    if tuple(images.shape[1:]) != encoder.config.image_shape:
        raise ShapeMismatchError('expected images of shape %s, got %s' % (
            encoder.config.image_shape, tuple(images.shape[1:])))


def _fit_tokens(encoder, tokens):
    tokens = np.asarray(tokens, dtype=np.int32)
    max_len = encoder.config.max_len
    if tokens.shape[1] > max_len:
        tokens = tokens[:, :max_len]
    elif tokens.shape[1] < max_len:
        tokens = np.pad(tokens, [(0, 0), (0, max_len - tokens.shape[1])])
    if np.any(np.all(tokens == 0, axis=1)):
        raise EmptyInputError('token sequence is empty')
    return tokens


def encode_image(encoder, image):
    image = np.asarray(image)
    _check_image_shape(encoder, image[np.newaxis])
    return Embedding(encoder(image[np.newaxis], training=False).numpy()[0])


def encode_text(encoder, tokens):
    tokens = np.asarray(tokens, dtype=np.int32)
    if tokens.ndim != 1 or tokens.shape[0] == 0:
        raise EmptyInputError('token sequence is empty')
    return Embedding(encoder(_fit_tokens(encoder, tokens[np.newaxis]), training=False).numpy()[0])


def encode_batches(encoder, inputs, batch_size=256):
    """Eval-mode encoding of a stacked array; returns an [n, d] array."""
    inputs = np.asarray(inputs)
    if isinstance(encoder, ImageEncoder):
        _check_image_shape(encoder, inputs)
    else:
        inputs = _fit_tokens(encoder, inputs)
    outputs = [encoder(inputs[i:i + batch_size], training=False).numpy()
               for i in range(0, inputs.shape[0], batch_size)]
    if not outputs:
        return np.zeros([0, encoder.config.output_dim])
    return np.concatenate(outputs, axis=0)


class DualEncoder(object):
    """Image and text students sharing one learnable temperature."""

    def __init__(self, image_encoder, text_encoder, temperature=None, tokenizer=None):
        if image_encoder.config.output_dim != text_encoder.config.output_dim:
            raise ShapeMismatchError('image and text students must share the output dim')
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        self.temperature = temperature or Temperature(TAU_INIT, name='temperature')
        self.tokenizer = tokenizer

    @property
    def output_dim(self):
        return self.image_encoder.config.output_dim

    @property
    def trainable_variables(self):
        return (list(self.image_encoder.trainable_variables) +
                list(self.text_encoder.trainable_variables) +
                list(self.temperature.trainable_variables))

    def checkpoint_groups(self):
        return {'image_encoder': self.image_encoder, 'text_encoder': self.text_encoder,
                'temperature': self.temperature}

    def encode_images(self, images, batch_size=256):
        return encode_batches(self.image_encoder, images, batch_size)

    def encode_tokens(self, tokens, batch_size=256):
        return encode_batches(self.text_encoder, tokens, batch_size)

    def encode_texts(self, texts, batch_size=256):
        if self.tokenizer is None:
            raise ValueError('encode_texts needs a tokenizer; use encode_tokens')
        if len(texts) == 0:
            raise EmptyInputError('no texts to encode')
        return self.encode_tokens(self.tokenizer.encode_batch(texts), batch_size)


def build_student(config, tokenizer, seed=None, dtype=None):
    seed = config.seed if seed is None else seed
    dtype = dtype or config.float_dtype
    image_config = EncoderConfig('image', config.image_hidden_dims, config.embed_dim, seed,
                                 image_shape=config.image_shape, conv_filters=config.image_conv_filters,
                                 dtype=dtype)
    text_config = EncoderConfig('text', config.text_hidden_dims, config.embed_dim, seed + 1,
                                vocab_size=tokenizer.vocab_size, embed_width=config.text_width,
                                max_len=tokenizer.max_len, dtype=dtype)
    return DualEncoder(ImageEncoder(image_config), TextEncoder(text_config),
                       Temperature(config.tau_init, name='temperature'), tokenizer)


@attr.s(frozen=True, eq=False)
class TeacherSpec(object):
    """A frozen teacher: plain numpy functions, so no gradient reaches it."""
    teacher_id = attr.ib(converter=int)
    native_dim = attr.ib(converter=int)
    encode_image = attr.ib()
    encode_text = attr.ib()
    frozen = attr.ib(default=True)
    name = attr.ib(default=None)
    weights = attr.ib(default=None, repr=False)

    @native_dim.validator
    def _check_dim(self, attribute, value):
        if value not in TEACHER_DIMS:
            raise ConfigError('teacher native_dim must be one of %s, got %d' % (TEACHER_DIMS, value))

    @frozen.validator
    def _check_frozen(self, attribute, value):
        if value is not True:
            raise ConfigError('teachers are always frozen')

    def encode_images(self, images):
        return np.stack([self.encode_image(im).values for im in images])

    def encode_token_batch(self, tokens):
        return np.stack([self.encode_text(t).values for t in tokens])


def make_synthetic_teacher(seed, native_dim, world=None, tokenizer=None, signal=1.0, noise=0.05,
                           teacher_id=None, name=None):
    """Teacher embedding: normalize(signal * M z_hat + noise * eps(input)).

    z_hat is the world latent recovered from the input (pseudo-inverse of the
    image mixing for images, bin words for captions). eps is drawn from an RNG
    seeded by (seed, crc32(input bytes)), so repeated calls are bit-identical.
    Without a world, z_hat is a seeded random projection of the raw input.
    """
    if native_dim not in TEACHER_DIMS:
        raise ConfigError('teacher native_dim must be one of %s, got %d' % (TEACHER_DIMS, native_dim))
    rng = np.random.default_rng([seed, native_dim])
    latent_dim = world.latent_dim if world is not None else 16
    mixing = rng.standard_normal((native_dim, latent_dim)) / np.sqrt(latent_dim)
    mixing.setflags(write=False)

    def _noise(data):
        arr = np.ascontiguousarray(data)
        noise_rng = np.random.default_rng([seed, crc32(arr.tobytes())])
        return noise_rng.standard_normal(native_dim) / np.sqrt(native_dim)

    def _embed(latent, data):
        signal_part = mixing.dot(latent)
        norm = np.linalg.norm(signal_part)
        if norm > 0:
            signal_part = signal_part / norm
        return normalize(signal * signal_part + noise * _noise(data))

    if world is not None:
        if tokenizer is None:
            tokenizer = world.tokenizer()

        def encode_image(image):
            image = np.asarray(image, dtype=np.float32)
            return _embed(world.decode_image(image), image)

        def encode_text(tokens):
            tokens = np.asarray(tokens, dtype=np.int32)
            if not np.any(tokens != 0):
                raise EmptyInputError('token sequence is empty')
            return _embed(world.decode_words(tokenizer.decode(tokens)), tokens)
    else:
        image_proj = {}

        def encode_image(image):
            image = np.asarray(image, dtype=np.float32).reshape(-1)
            if image.shape[0] not in image_proj:
                proj_rng = np.random.default_rng([seed, image.shape[0]])
                image_proj[image.shape[0]] = proj_rng.standard_normal((latent_dim, image.shape[0]))
            return _embed(image_proj[image.shape[0]].dot(image - 0.5), image)

        def encode_text(tokens):
            tokens = np.asarray(tokens, dtype=np.int32)
            if not np.any(tokens != 0):
                raise EmptyInputError('token sequence is empty')
            latent = np.zeros([latent_dim])
            for t in tokens[tokens != 0]:
                latent += np.random.default_rng([seed, int(t)]).standard_normal(latent_dim)
            return _embed(latent, tokens)

    return TeacherSpec(teacher_id=seed if teacher_id is None else teacher_id, native_dim=native_dim,
                       encode_image=encode_image, encode_text=encode_text,
                       name=name or 'teacher_%d' % (seed if teacher_id is None else teacher_id),
                       weights=mixing)


def build_teachers(config, world, tokenizer):
    return [make_synthetic_teacher(t['seed'], t['native_dim'], world=world, tokenizer=tokenizer,
                                   signal=t['signal'], noise=t['noise'], teacher_id=t['teacher_id'])
            for t in config.teachers]


def teacher_features(teacher, corpus):
    """(image features [n, native_dim], text features [n, native_dim]) for a corpus."""
    return (normalize_rows(teacher.encode_images(corpus.images)),
            normalize_rows(teacher.encode_token_batch(corpus.tokens)))
