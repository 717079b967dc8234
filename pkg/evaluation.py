"""Downstream evaluation: zero-shot classification, linear probing, retrieval.

Every metric comes back as a `MetricEstimate` (point plus percentile
bootstrap interval); a task's metrics are collected in an `EvalReport`.
"""
from __future__ import absolute_import, division, print_function

import json
import os
from collections import OrderedDict

import attr
import numpy as np
import tensorflow as tf
from absl import logging
from scipy.stats import rankdata

from core import (ConfigError, EmptyInputError, MetricUndefinedError, ShapeMismatchError,
                  normalize, normalize_rows)
from utils.stats import BootstrapResult, bootstrap_ci, fold_ci, mann_whitney_u  # noqa: F401

DEFAULT_KS = (1, 10, 50)
PROBE_FRACTIONS = (0.01, 0.1, 1.0)


def _check_prompts(instance, attribute, value):
    if not value:
        raise EmptyInputError('a prompt set needs at least one class')
    for name, prompts in value.items():
        if len(prompts) == 0:
            raise EmptyInputError('class %r has no prompts' % name)


@attr.s(frozen=True)
class PromptSet(object):
    """Class name -> prompt sentences, in class-index order."""
    prompts = attr.ib(converter=OrderedDict, validator=_check_prompts)

    @property
    def class_names(self):
        return list(self.prompts.keys())

    def __len__(self):
        return len(self.prompts)

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(self.prompts, f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, 'r') as f:
            return cls(json.load(f, object_pairs_hook=OrderedDict))


def average_embeddings(embeddings):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise EmptyInputError('no embeddings to average')
    return normalize(np.mean(embeddings, axis=0))


def class_embedding(encoder, prompts):
    """Prompt ensemble: mean of the prompt embeddings, re-normalized."""
    if len(prompts) == 0:
        raise EmptyInputError('class embedding needs at least one prompt')
    return average_embeddings(encoder.encode_texts(list(prompts)))


def class_embeddings(encoder, prompt_set):
    return np.stack([class_embedding(encoder, prompt_set.prompts[c]).values
                     for c in prompt_set.class_names])


def zero_shot_scores(image_embeddings, class_matrix):
    """Cosine similarity of every image to every class embedding, [n, C]."""
    return normalize_rows(np.asarray(image_embeddings, dtype=np.float64)).dot(
        normalize_rows(np.asarray(class_matrix, dtype=np.float64)).T)


@attr.s(frozen=True)
class ZeroShotResult(object):
    scores = attr.ib()
    predictions = attr.ib()


def zero_shot_classify(encoder, images, prompt_set):
    """Scores and argmax predictions; ties go to the lowest class index."""
    if len(prompt_set) < 2:
        raise ConfigError('zero-shot classification needs at least 2 classes')
    scores = zero_shot_scores(encoder.encode_images(images), class_embeddings(encoder, prompt_set))
    return ZeroShotResult(scores, np.argmax(scores, axis=1))


def _binary_labels(labels):
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError('binary labels must be 0 or 1')
    return labels.astype(bool)


def auc(scores, labels):
    """P(score+ > score-) + 0.5 P(equal) over all positive/negative pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary_labels(labels)
    if scores.shape != labels.shape:
        raise ShapeMismatchError('scores and labels differ in shape')
    n_pos = int(np.sum(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError('AUC needs both classes present')
    ranks = rankdata(scores)
    u = np.sum(ranks[labels]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(score_matrix, labels):
    """One-vs-rest AUC averaged over the classes present in `labels`."""
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels)
    if score_matrix.ndim != 2 or score_matrix.shape[0] != labels.shape[0]:
        raise ShapeMismatchError('score matrix must be [n, classes] with one label per row')
    present = np.unique(labels)
    if present.shape[0] < 2:
        raise MetricUndefinedError('AUC needs at least two classes present')
    if score_matrix.shape[1] == 2 and set(present.tolist()) <= {0, 1}:
        return auc(score_matrix[:, 1], labels == 1)
    return float(np.mean([auc(score_matrix[:, c], labels == c) for c in present]))


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeMismatchError('predictions and labels differ in length')
    if labels.size == 0:
        raise EmptyInputError('accuracy of an empty set')
    return float(np.mean(predictions == labels))


def retrieval_ranks(queries, gallery, truth):
    """0-based rank of each query's true gallery item; ties go to the lower index."""
    queries = normalize_rows(np.asarray(queries, dtype=np.float64))
    gallery = normalize_rows(np.asarray(gallery, dtype=np.float64))
    if isinstance(truth, dict):
        missing = [q for q in range(queries.shape[0]) if q not in truth]
        if missing:
            raise MetricUndefinedError('no true gallery item for queries %s' % missing[:5])
        truth = [truth[q] for q in range(queries.shape[0])]
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape[0] != queries.shape[0]:
        raise MetricUndefinedError('%d truth entries for %d queries' % (truth.shape[0],
                                                                         queries.shape[0]))
    sims = queries.dot(gallery.T)
    true_sims = sims[np.arange(queries.shape[0]), truth][:, np.newaxis]
    before = np.arange(gallery.shape[0])[np.newaxis, :] < truth[:, np.newaxis]
    return np.sum(sims > true_sims, axis=1) + np.sum((sims == true_sims) & before, axis=1)


def recall_at_k(ranks, k):
    return float(np.mean(np.asarray(ranks) < k))


def retrieval(queries, gallery, truth, ks=DEFAULT_KS):
    """Recall@K for each k."""
    gallery = np.asarray(gallery)
    if gallery.shape[0] < max(ks):
        raise MetricUndefinedError('gallery of %d is smaller than K=%d' % (gallery.shape[0],
                                                                            max(ks)))
    ranks = retrieval_ranks(queries, gallery, truth)
    return OrderedDict((k, recall_at_k(ranks, k)) for k in ks)


def retrieval_report(image_embeddings, text_embeddings, ks=DEFAULT_KS):
    """Both directions over paired embeddings (row i of each is one pair)."""
    truth = np.arange(np.shape(image_embeddings)[0])
    return OrderedDict([('image_to_text', retrieval(image_embeddings, text_embeddings, truth, ks)),
                        ('text_to_image', retrieval(text_embeddings, image_embeddings, truth, ks))])


def stratified_fraction(labels, fraction, seed=0):
    """Rows keeping round(fraction * n_c) examples of every class c."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, int(round(fraction * 1e6))])
    rows = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        n = int(round(fraction * members.shape[0]))
        if n < 1:
            raise MetricUndefinedError('class %r is absent from the %.3g subsample' % (c, fraction))
        rows.append(np.sort(rng.choice(members, size=n, replace=False)))
    return np.sort(np.concatenate(rows))


@attr.s
class ProbeResult(object):
    model = attr.ib()
    auc = attr.ib(converter=float)
    n_train = attr.ib(converter=int)
    fraction = attr.ib(converter=float)
    scores = attr.ib(default=None, repr=False)


def linear_probe(train_features, train_labels, test_features, test_labels, fraction=1.0,
                 lr=5e-5, epochs=20, batch_size=128, weight_decay=0.0, seed=0):
    """Single Dense layer on frozen features, cross-entropy, AUC on the fixed test set."""
    train_features = np.asarray(train_features, dtype=np.float32)
    test_features = np.asarray(test_features, dtype=np.float32)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if np.unique(train_labels).shape[0] < 2:
        raise MetricUndefinedError('linear probe needs at least two classes')
    rows = stratified_fraction(train_labels, fraction, seed)
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1

    tf.keras.utils.set_random_seed(seed)
    model = tf.keras.Sequential([
        tf.keras.Input(shape=(train_features.shape[1],)),
        tf.keras.layers.Dense(n_classes, name='probe',
                              kernel_initializer=tf.keras.initializers.GlorotUniform(seed=seed)),
    ])
    optimizer = tf.keras.optimizers.AdamW(learning_rate=lr, weight_decay=weight_decay)
    model.compile(optimizer=optimizer,
                  loss=tf.keras.losses.SparseCategoricalCrossentropy(from_logits=True))
    model.fit(train_features[rows], train_labels[rows], epochs=epochs,
              batch_size=min(batch_size, rows.shape[0]), shuffle=True, verbose=0)
    logits = model.predict(test_features, batch_size=1024, verbose=0)
    probs = tf.nn.softmax(logits, axis=1).numpy()
    result = ProbeResult(model, macro_auc(probs, test_labels), rows.shape[0], fraction, probs)
    logging.info('linear probe at %.3g: %d training rows, AUC %.4f', fraction, rows.shape[0],
                 result.auc)
    return result


def _check_interval(instance, attribute, value):
    if instance.replicates > 0 and not instance.ci_low <= instance.point <= instance.ci_high:
        raise ValueError('interval [%g, %g] does not contain %g' % (
            instance.ci_low, instance.point, instance.ci_high))


@attr.s(frozen=True)
class MetricEstimate(object):
    point = attr.ib(converter=float)
    ci_low = attr.ib(converter=float)
    ci_high = attr.ib(converter=float)
    replicates = attr.ib(converter=int, validator=_check_interval)

    @classmethod
    def from_bootstrap(cls, result):
        return cls(result.point, result.ci_low, result.ci_high, result.replicates)

    @classmethod
    def from_folds(cls, values, level=0.95):
        mean, low, high = fold_ci(values, level)
        return cls(mean, low, high, len(values))

    def to_dict(self):
        return OrderedDict([('point', self.point), ('ci_low', self.ci_low),
                            ('ci_high', self.ci_high), ('replicates', self.replicates)])


def estimate(metric, data, replicates=1000, level=0.95, seed=0, workers=1):
    return MetricEstimate.from_bootstrap(bootstrap_ci(metric, data, replicates, level, seed,
                                                      workers))


@attr.s
class EvalReport(object):
    task = attr.ib()
    metrics = attr.ib(factory=OrderedDict)
    details = attr.ib(factory=OrderedDict)

    def add(self, name, value):
        self.metrics[name] = value
        return value

    def to_dict(self):
        return OrderedDict([('task', self.task),
                            ('metrics', OrderedDict((k, v.to_dict())
                                                    for k, v in self.metrics.items())),
                            ('details', self.details)])

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path):
        dir_name = os.path.dirname(path)
        if dir_name:
            os.makedirs(dir_name, exist_ok=True)
        with open(path, 'w') as f:
            f.write(self.to_json() + '\n')
        return path

    @classmethod
    def load(cls, path):
        with open(path, 'r') as f:
            d = json.load(f)
        metrics = OrderedDict((k, MetricEstimate(**v)) for k, v in sorted(d['metrics'].items()))
        return cls(d['task'], metrics, d.get('details', OrderedDict()))


def compare_models(samples_a, samples_b):
    """Two-sided Mann-Whitney U p-value between two metric distributions."""
    _, p = mann_whitney_u(samples_a, samples_b)
    return p


def evaluate_zero_shot(encoder, images, labels, prompt_set, replicates=1000, level=0.95, seed=0):
    result = zero_shot_classify(encoder, images, prompt_set)
    labels = np.asarray(labels)
    report = EvalReport('zeroshot')
    report.add('auc', estimate(macro_auc, (result.scores, labels), replicates, level, seed))
    report.add('accuracy', estimate(accuracy, (result.predictions, labels), replicates, level,
                                    seed))
    report.details['n_images'] = int(labels.shape[0])
    report.details['classes'] = prompt_set.class_names
    return report


def evaluate_retrieval(encoder, images, tokens, ks=DEFAULT_KS, replicates=1000, level=0.95,
                       seed=0):
    image_embeddings = encoder.encode_images(images)
    text_embeddings = encoder.encode_tokens(tokens)
    dropped = [k for k in ks if k > image_embeddings.shape[0]]
    if dropped:
        logging.warning('skipping recall@K for K=%s, larger than the gallery of %d', dropped,
                        image_embeddings.shape[0])
    ks = [k for k in ks if k <= image_embeddings.shape[0]]
    truth = np.arange(image_embeddings.shape[0])
    report = EvalReport('retrieval')
    directions = (('image_to_text', image_embeddings, text_embeddings),
                  ('text_to_image', text_embeddings, image_embeddings))
    for direction, queries, gallery in directions:
        ranks = retrieval_ranks(queries, gallery, truth)
        for k in ks:
            report.add('%s_recall@%d' % (direction, k),
                       estimate(lambda r, k=k: recall_at_k(r, k), ranks, replicates, level, seed))
    report.details['n_pairs'] = int(truth.shape[0])
    return report


def evaluate_linear_probe(train_features, train_labels, test_features, test_labels,
                          fractions=PROBE_FRACTIONS, replicates=1000, level=0.95, seed=0,
                          **probe_options):
    report = EvalReport('linear_probe')
    for fraction in fractions:
        result = linear_probe(train_features, train_labels, test_features, test_labels,
                              fraction, seed=seed, **probe_options)
        report.add('auc@%g' % fraction, estimate(macro_auc, (result.scores, test_labels),
                                                 replicates, level, seed))
        report.details['n_train@%g' % fraction] = result.n_train
    return report
