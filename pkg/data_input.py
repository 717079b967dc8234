from __future__ import absolute_import, division, print_function

import json
import os
import zlib
from collections import OrderedDict

import attr
import numpy as np
from absl import logging
from scipy.special import expit, logit

from core import (Batch, ConfigError, CorpusTooSmallError, ImageTextPair, ManifestError,
                  MAX_TEXT_LEN, ShapeMismatchError)
from feature_store import ManifestEntry, read_manifest, write_manifest
from utils.threadsafe_iter import prefetch, threadsafe_generator

PAD_ID = 0
UNK_ID = 1
TEMPLATE_WORDS = ['an', 'image', 'of', 'with', 'a', 'photo', 'scan', 'showing',
                  'typical', 'finding', 'appearance']
PROMPT_TEMPLATES = ['an image of {}', 'a photo of {}', 'a scan showing {}',
                    'a typical {} finding', '{} appearance']
SPLITS = ('train', 'test')


def crc32(data):
    if isinstance(data, str):
        data = data.encode('utf-8')
    return zlib.crc32(data) & 0xffffffff


class Tokenizer(object):
    """Whitespace tokenizer over a fixed vocabulary.

    Known words map to ids 2..len(vocabulary)+1, other words are hashed with
    crc32 into `hash_buckets` extra ids. Id 0 is padding.
    """

    def __init__(self, vocabulary, max_len=32, hash_buckets=256):
        if not 0 < max_len <= MAX_TEXT_LEN:
            raise ConfigError('max_len must lie in [1, %d]' % MAX_TEXT_LEN)
        self.vocabulary = list(vocabulary)
        self.max_len = max_len
        self.hash_buckets = hash_buckets
        self.word_to_id = dict((w, i + 2) for i, w in enumerate(self.vocabulary))
        self.id_to_word = dict((i, w) for w, i in self.word_to_id.items())
        self.vocab_size = 2 + len(self.vocabulary) + hash_buckets

    def word_id(self, word):
        if word in self.word_to_id:
            return self.word_to_id[word]
        if self.hash_buckets == 0:
            return UNK_ID
        return 2 + len(self.vocabulary) + crc32(word) % self.hash_buckets

    def encode(self, text):
        ids = [self.word_id(w) for w in text.lower().split()][:self.max_len]
        tokens = np.zeros([self.max_len], dtype=np.int32)
        tokens[:len(ids)] = ids
        return tokens

    def encode_batch(self, texts):
        if len(texts) == 0:
            return np.zeros([0, self.max_len], dtype=np.int32)
        return np.stack([self.encode(t) for t in texts])

    def decode(self, tokens):
        return [self.id_to_word.get(int(t), '<unk>') for t in tokens if t != PAD_ID]


@attr.s(eq=False)
class SyntheticWorld(object):
    """Planted-class generative world behind the desk-scale corpus.

    A sample is a latent z = prototype[class] + spread * N(0, I). Its image is
    sigmoid(A z + noise) and its caption names the class and writes every
    coordinate of z as a quantized bin word `d<j>_<bin>`.
    """
    seed = attr.ib(converter=int)
    n_classes = attr.ib(converter=int)
    latent_dim = attr.ib(default=16, converter=int)
    image_shape = attr.ib(default=(16, 16, 3), converter=tuple)
    n_bins = attr.ib(default=24, converter=int)
    bin_range = attr.ib(default=6.0, converter=float)
    class_scale = attr.ib(default=2.0, converter=float)
    instance_spread = attr.ib(default=1.0, converter=float)
    pixel_noise = attr.ib(default=0.05, converter=float)

    def __attrs_post_init__(self):
        if self.n_classes < 2:
            raise ConfigError('a world needs at least 2 classes')
        rng = np.random.default_rng([self.seed, 0])
        self.prototypes = self.class_scale * rng.standard_normal((self.n_classes, self.latent_dim))
        n_pixels = int(np.prod(self.image_shape))
        scale = 1.0 / np.sqrt(self.latent_dim * (self.class_scale ** 2 + self.instance_spread ** 2))
        self.mixing = scale * rng.standard_normal((n_pixels, self.latent_dim))
        self.unmixing = np.linalg.pinv(self.mixing)
        self.bin_edges = np.linspace(-self.bin_range, self.bin_range, self.n_bins + 1)

    @classmethod
    def from_config(cls, config):
        return cls(seed=config.seed, n_classes=config.n_classes, latent_dim=config.latent_dim,
                   image_shape=config.image_shape, n_bins=config.n_bins,
                   bin_range=config.bin_range, class_scale=config.class_scale,
                   instance_spread=config.instance_spread, pixel_noise=config.pixel_noise)

    def to_dict(self):
        d = attr.asdict(self, filter=lambda a, v: a.init)
        d['image_shape'] = list(self.image_shape)
        return d

    @property
    def class_names(self):
        return ['class%d' % c for c in range(self.n_classes)]

    def vocabulary(self):
        bins = ['d%d_%d' % (j, b) for j in range(self.latent_dim) for b in range(self.n_bins)]
        return TEMPLATE_WORDS + self.class_names + bins

    def tokenizer(self, max_len=32):
        return Tokenizer(self.vocabulary(), max_len=max_len)

    def sample_latents(self, labels, rng):
        labels = np.asarray(labels)
        return self.prototypes[labels] + self.instance_spread * rng.standard_normal(
            (labels.shape[0], self.latent_dim))

    def render(self, latents, rng):
        latents = np.atleast_2d(latents)
        pre = latents.dot(self.mixing.T) + self.pixel_noise * rng.standard_normal(
            (latents.shape[0], self.mixing.shape[0]))
        images = expit(pre).astype(np.float32)
        return images.reshape((latents.shape[0],) + self.image_shape)

    def bins(self, latent):
        return np.clip(np.digitize(latent, self.bin_edges) - 1, 0, self.n_bins - 1)

    def bin_centers(self, bins):
        return 0.5 * (self.bin_edges[bins] + self.bin_edges[np.asarray(bins) + 1])

    def caption(self, latent, label):
        words = ['an', 'image', 'of', self.class_names[label], 'with']
        words += ['d%d_%d' % (j, b) for j, b in enumerate(self.bins(latent))]
        return ' '.join(words)

    def decode_image(self, image):
        pixels = np.clip(np.asarray(image, dtype=np.float64).reshape(-1), 1e-6, 1.0 - 1e-6)
        if pixels.shape[0] != self.mixing.shape[0]:
            raise ShapeMismatchError('image has %d values, world renders %d' % (
                pixels.shape[0], self.mixing.shape[0]))
        return self.unmixing.dot(logit(pixels))

    def decode_words(self, words):
        """Latent estimate from bin words; coordinates never mentioned stay 0."""
        latent = np.zeros([self.latent_dim])
        for word in words:
            if not word.startswith('d') or '_' not in word:
                continue
            dim, _, b = word[1:].partition('_')
            if dim.isdigit() and b.isdigit() and int(dim) < self.latent_dim and int(b) < self.n_bins:
                latent[int(dim)] = self.bin_centers(int(b))
        return latent


def prompt_set(world):
    from evaluation import PromptSet
    return PromptSet(OrderedDict((c, [t.format(c) for t in PROMPT_TEMPLATES])
                                 for c in world.class_names))


@attr.s(eq=False)
class Corpus(object):
    """Image-text pairs held in RAM, one row per pair."""
    image_ids = attr.ib(converter=lambda x: np.asarray(x, dtype=np.int64))
    text_ids = attr.ib(converter=lambda x: np.asarray(x, dtype=np.int64))
    images = attr.ib(converter=np.asarray)
    tokens = attr.ib(converter=lambda x: np.asarray(x, dtype=np.int32))
    captions = attr.ib(converter=list)
    labels = attr.ib(converter=lambda x: np.asarray(x, dtype=np.int64))
    splits = attr.ib(converter=lambda x: np.asarray(x, dtype=object))
    modalities = attr.ib(converter=list)
    class_names = attr.ib(converter=list)

    def __attrs_post_init__(self):
        n = self.image_ids.shape[0]
        for name in ('text_ids', 'images', 'tokens', 'labels', 'splits'):
            if getattr(self, name).shape[0] != n:
                raise ShapeMismatchError('corpus column %s has %d rows, expected %d' % (
                    name, getattr(self, name).shape[0], n))
        self.index = dict(((int(i), int(t)), row) for row, (i, t) in
                          enumerate(zip(self.image_ids, self.text_ids)))

    def __len__(self):
        return int(self.image_ids.shape[0])

    def row_of(self, image_id, text_id):
        key = (int(image_id), int(text_id))
        if key not in self.index:
            raise KeyError('pair %s not in corpus' % (key,))
        return self.index[key]

    def subset(self, split):
        rows = np.flatnonzero(self.splits == split)
        return self.take(rows)

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Corpus(self.image_ids[rows], self.text_ids[rows], self.images[rows],
                      self.tokens[rows], [self.captions[r] for r in rows], self.labels[rows],
                      self.splits[rows], [self.modalities[r] for r in rows], self.class_names)

    def pair(self, row):
        return ImageTextPair(self.image_ids[row], self.text_ids[row], self.images[row],
                             self.tokens[row], caption=self.captions[row])

    def pairs(self):
        for row in range(len(self)):
            yield self.pair(row)

    def modality_tally(self):
        tally = OrderedDict()
        for m in sorted(set(self.modalities)):
            tally[m] = self.modalities.count(m)
        return tally


def synth_corpus(world, n_pairs, seed, test_fraction=0.25, tokenizer=None, n_modalities=4):
    """Balanced planted-class corpus; the split is stratified by class."""
    if n_pairs < world.n_classes:
        raise ConfigError('need n_pairs >= n_classes (%d < %d)' % (n_pairs, world.n_classes))
    tokenizer = tokenizer or world.tokenizer()
    rng = np.random.default_rng([seed, 1])
    labels = rng.permutation(np.arange(n_pairs) % world.n_classes)
    latents = world.sample_latents(labels, rng)
    images = world.render(latents, rng)
    captions = [world.caption(z, c) for z, c in zip(latents, labels)]

    splits = np.array(['train'] * n_pairs, dtype=object)
    for c in range(world.n_classes):
        rows = np.flatnonzero(labels == c)
        n_test = int(round(test_fraction * rows.shape[0]))
        if n_test:
            splits[rows[-n_test:]] = 'test'

    ids = np.arange(n_pairs, dtype=np.int64)
    return Corpus(image_ids=ids, text_ids=ids, images=images,
                  tokens=tokenizer.encode_batch(captions), captions=captions, labels=labels,
                  splits=splits, modalities=['modality%d' % (c % n_modalities) for c in labels],
                  class_names=world.class_names)


def write_corpus(corpus, world, out_dir, prompts=None):
    """Writes images/*.npy, manifest.jsonl, prompts.json and world.json."""
    os.makedirs(os.path.join(out_dir, 'images'), exist_ok=True)
    entries = []
    for row in range(len(corpus)):
        image_path = os.path.join('images', '%08d.npy' % corpus.image_ids[row])
        np.save(os.path.join(out_dir, image_path), corpus.images[row])
        entries.append(ManifestEntry(image_id=corpus.image_ids[row], text_id=corpus.text_ids[row],
                                     modality=corpus.modalities[row], image_path=image_path,
                                     text=corpus.captions[row], label=int(corpus.labels[row]),
                                     split=corpus.splits[row]))
    manifest_path = os.path.join(out_dir, 'manifest.jsonl')
    write_manifest(manifest_path, entries)
    prompts = prompts or prompt_set(world)
    prompts.save(os.path.join(out_dir, 'prompts.json'))
    with open(os.path.join(out_dir, 'world.json'), 'w') as f:
        json.dump(world.to_dict(), f, sort_keys=True, indent=2)
    logging.info('wrote %d pairs to %s', len(corpus), out_dir)
    return manifest_path


def load_world(corpus_dir):
    with open(os.path.join(corpus_dir, 'world.json'), 'r') as f:
        return SyntheticWorld(**json.load(f))


def load_corpus(manifest_path, tokenizer, class_names=None):
    manifest = read_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    entries = manifest.entries
    if not entries:
        return Corpus([], [], np.zeros([0, 1, 1, 1], np.float32), np.zeros([0, tokenizer.max_len]),
                      [], [], [], [], class_names or [])
    images = []
    for line_number, entry in enumerate(entries, 1):
        path = os.path.join(root, entry.image_path)
        if not os.path.exists(path):
            raise ManifestError('image file %s not found' % entry.image_path, line_number)
        images.append(np.load(path))
    labels = [e.label if e.label is not None else -1 for e in entries]
    if class_names is None:
        class_names = ['class%d' % c for c in range(max(labels) + 1)]
    return Corpus(image_ids=[e.image_id for e in entries], text_ids=[e.text_id for e in entries],
                  images=np.stack(images), tokens=tokenizer.encode_batch([e.text for e in entries]),
                  captions=[e.text for e in entries], labels=labels,
                  splits=[e.split or 'train' for e in entries],
                  modalities=[e.modality for e in entries], class_names=class_names)


class DataInput(object):
    """Shuffled fixed-size batches over a corpus, one permutation per epoch."""
    def __init__(self, corpus, batch_size, seed=0, prefetch_depth=0):
        if len(corpus) < batch_size:
            raise CorpusTooSmallError('corpus of %d pairs is smaller than batch size %d' % (
                len(corpus), batch_size))
        self.corpus = corpus
        self.batch_size = batch_size
        self.seed = seed
        self.prefetch_depth = prefetch_depth
        self.rows = np.arange(len(corpus))
        self.train_epoch_size = len(self.rows) // batch_size

    def _make_batch(self, rows, rng):
        return Batch(rows, self.corpus.images[rows], self.corpus.tokens[rows])

    @threadsafe_generator
    def batch_generator(self, is_training=True):
        epoch = 0
        while True:
            rng = np.random.default_rng([self.seed, epoch])
            order = rng.permutation(self.rows) if is_training else self.rows
            for b in range(self.train_epoch_size):
                rows = order[b * self.batch_size:(b + 1) * self.batch_size]
                yield self._make_batch(rows, rng)
            epoch += 1

    def batches(self, is_training=True):
        return prefetch(self.batch_generator(is_training), self.prefetch_depth)


class QuadrupletInput(DataInput):
    """Distillation batches: each pair carries one of its trusted teachers'
    features, re-sampled uniformly every epoch."""
    def __init__(self, corpus, quadruplets, batch_size, seed=0, prefetch_depth=0):
        groups = OrderedDict()
        image_features, text_features = [], []
        for q in quadruplets:
            try:
                row = corpus.row_of(q.image_id, q.text_id)
            except KeyError:
                raise ShapeMismatchError('quadruplet (%d, %d) has no pair in the corpus' % q.key)
            groups.setdefault(row, []).append(len(image_features))
            image_features.append(q.teacher_image_feature.values)
            text_features.append(q.teacher_text_feature.values)
        if len(groups) < batch_size:
            raise CorpusTooSmallError('%d distillable pairs is smaller than batch size %d' % (
                len(groups), batch_size))
        super(QuadrupletInput, self).__init__(corpus, batch_size, seed, prefetch_depth)
        self.rows = np.array(sorted(groups.keys()))
        self.groups = groups
        self.teacher_images = np.stack(image_features).astype(np.float32)
        self.teacher_texts = np.stack(text_features).astype(np.float32)
        self.feature_dim = self.teacher_images.shape[1]
        self.train_epoch_size = len(self.rows) // batch_size

    def _make_batch(self, rows, rng):
        picks = np.array([self.groups[r][rng.integers(len(self.groups[r]))] for r in rows])
        return Batch(rows, self.corpus.images[rows], self.corpus.tokens[rows],
                     teacher_images=self.teacher_images[picks],
                     teacher_texts=self.teacher_texts[picks])
