"""Trustworthy-teacher quadruplet extraction.

Every teacher runs a 5-way zero-shot test per image-text pair: the image
against its own caption and four unpaired captions. A teacher whose softmax
mass on the true caption exceeds the threshold is trusted for that pair and
contributes one quadruplet of aligned features.
"""
from __future__ import absolute_import, division, print_function

import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import attr
import numpy as np
from absl import logging
from scipy.special import softmax

from core import (CorpusTooSmallError, DEFAULT_DIM, Embedding, EmptyInputError, Quadruplet,
                  ShapeMismatchError, normalize_rows)
from feature_store import shard_path, write_shard
from models.alignment import TeacherFeatures, joint_features
from models.encoders import teacher_features
from utils.viz import plot_teacher_shares, write_csv

TRUST_THRESHOLD = 0.9
TRUST_TAU = 0.07
N_DISTRACTORS = 4


@attr.s(frozen=True)
class TrustDecision(object):
    pair_key = attr.ib(converter=tuple)
    teacher_id = attr.ib(converter=int)
    correct_class_prob = attr.ib(converter=float)
    trusted = attr.ib(converter=bool)
    threshold = attr.ib(default=TRUST_THRESHOLD, converter=float)


def decide_trust(prob, threshold=TRUST_THRESHOLD):
    return bool(prob > threshold)


def trust_from_similarities(similarities, tau=TRUST_TAU, threshold=TRUST_THRESHOLD):
    """(probability of entry 0, trusted) under softmax(similarities / tau)."""
    similarities = np.asarray(similarities, dtype=np.float64)
    if similarities.ndim != 1 or similarities.shape[0] < 2:
        raise EmptyInputError('trust test needs the true text and at least one distractor')
    prob = float(softmax(similarities / tau)[0])
    return prob, decide_trust(prob, threshold)


def _text_rows(corpus):
    """Unique text ids and the first corpus row holding each."""
    text_ids, rows = np.unique(corpus.text_ids, return_index=True)
    return text_ids, rows


def _distractor_rows(image_id, text_id, text_ids, rows, k, rng_seed):
    candidates = np.flatnonzero(text_ids != text_id)
    if candidates.shape[0] < k:
        raise CorpusTooSmallError('need %d texts besides the pair, corpus has %d' % (
            k, candidates.shape[0]))
    rng = np.random.default_rng([rng_seed, int(image_id), int(text_id)])
    picks = rng.choice(candidates, size=k, replace=False)
    return text_ids[picks], rows[picks]


def sample_distractors(pair, corpus, k=N_DISTRACTORS, rng_seed=0):
    """k text ids drawn uniformly without replacement, never the pair's own."""
    text_ids, rows = _text_rows(corpus)
    ids, _ = _distractor_rows(pair.image_id, pair.text_id, text_ids, rows, k, rng_seed)
    return [int(i) for i in ids]


def trust_check(teacher, pair, distractors, tau_fixed=TRUST_TAU, threshold=TRUST_THRESHOLD):
    """distractors: token sequences of the unpaired texts."""
    if len(distractors) < 1:
        raise EmptyInputError('trust test needs at least one distractor')
    image = teacher.encode_image(pair.image)
    texts = [teacher.encode_text(pair.text)] + [teacher.encode_text(t) for t in distractors]
    similarities = [image.cosine(t) for t in texts]
    prob, trusted = trust_from_similarities(similarities, tau_fixed, threshold)
    return TrustDecision(pair.key, teacher.teacher_id, prob, trusted, threshold)


def native_features(teachers, corpus):
    """{teacher_id: TeacherFeatures} on a corpus, keyed by image id."""
    features = OrderedDict()
    for teacher in teachers:
        image, text = teacher_features(teacher, corpus)
        features[teacher.teacher_id] = TeacherFeatures(image, text, sample_ids=corpus.image_ids)
    return features


def aligned_features(teacher_id, features, alignment=None, target='projector'):
    """(image, text) joint-space features of one teacher at the `target` alignment stage."""
    if alignment is None:
        if features.image.shape[1] != DEFAULT_DIM:
            raise ShapeMismatchError('teacher %d is %d-d and no alignment model was given' % (
                teacher_id, features.image.shape[1]))
        return features.image, features.text
    return (normalize_rows(joint_features(alignment, teacher_id, features.image, 'image', target)),
            normalize_rows(joint_features(alignment, teacher_id, features.text, 'text', target)))


@attr.s
class SelectionSummary(object):
    n_pairs = attr.ib(default=0)
    n_quadruplets = attr.ib(default=0)
    dropped_pairs = attr.ib(default=0)
    counts = attr.ib(factory=OrderedDict)
    trust_rates = attr.ib(factory=OrderedDict)
    mean_probs = attr.ib(factory=OrderedDict)
    teacher_names = attr.ib(factory=OrderedDict)

    @property
    def shares(self):
        total = float(sum(self.counts.values()))
        return OrderedDict((t, c / total if total else 0.0) for t, c in self.counts.items())

    def to_dict(self):
        return OrderedDict([
            ('n_pairs', self.n_pairs), ('n_quadruplets', self.n_quadruplets),
            ('dropped_pairs', self.dropped_pairs),
            ('teachers', [OrderedDict([('teacher_id', t), ('name', self.teacher_names.get(t)),
                                       ('quadruplets', self.counts[t]),
                                       ('share', self.shares[t]),
                                       ('trust_rate', self.trust_rates[t]),
                                       ('mean_correct_prob', self.mean_probs[t])])
                          for t in self.counts])])

    def write_csv(self, path):
        rows = [(t, self.teacher_names.get(t), self.counts[t], self.shares[t],
                 self.trust_rates[t], self.mean_probs[t]) for t in self.counts]
        return write_csv(path, ['teacher_id', 'name', 'quadruplets', 'share', 'trust_rate',
                                'mean_correct_prob'], rows)

    def plot(self, png_path):
        plot_teacher_shares(OrderedDict((self.teacher_names.get(t) or str(t), c)
                                        for t, c in self.counts.items()), png_path)


@attr.s
class QuadrupletSelection(object):
    quadruplets = attr.ib(factory=list)
    decisions = attr.ib(factory=list)
    summary = attr.ib(factory=SelectionSummary)

    @property
    def feature_dim(self):
        return self.quadruplets[0].dim if self.quadruplets else None


def build_quadruplets(teachers, alignment, corpus, rng_seed=0, k=N_DISTRACTORS, tau=TRUST_TAU,
                      threshold=TRUST_THRESHOLD, workers=1, features=None,
                      target='projector'):
    """One quadruplet per (pair, trusted teacher), ordered by pair then teacher.

    The same distractors are shown to every teacher. Quadruplets carry the
    joint-space features produced by `alignment` at the `target` stage (raw
    features when it is None and the teacher is already 512-d).
    """
    if not teachers:
        raise EmptyInputError('no teachers registered')
    if len(corpus) == 0:
        raise EmptyInputError('corpus is empty')
    features = features if features is not None else native_features(teachers, corpus)
    teacher_ids = [t.teacher_id for t in teachers]
    text_ids, text_rows = _text_rows(corpus)

    distractors = [_distractor_rows(corpus.image_ids[r], corpus.text_ids[r], text_ids, text_rows,
                                    k, rng_seed)[1] for r in range(len(corpus))]

    def probs_for(teacher_id):
        f = features[teacher_id]
        candidates = np.stack([np.concatenate([[r], distractors[r]]) for r in range(len(corpus))])
        sims = np.einsum('nd,nkd->nk', f.image.astype(np.float64),
                         f.text[candidates].astype(np.float64))
        return softmax(sims / tau, axis=1)[:, 0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            probs = OrderedDict(zip(teacher_ids, pool.map(probs_for, teacher_ids)))
    else:
        probs = OrderedDict((t, probs_for(t)) for t in teacher_ids)

    aligned = OrderedDict((t, aligned_features(t, features[t], alignment, target))
                          for t in teacher_ids)

    selection = QuadrupletSelection()
    summary = selection.summary
    summary.n_pairs = len(corpus)
    for teacher in teachers:
        summary.counts[teacher.teacher_id] = 0
        summary.teacher_names[teacher.teacher_id] = teacher.name
    for row in range(len(corpus)):
        key = (int(corpus.image_ids[row]), int(corpus.text_ids[row]))
        n_trusted = 0
        for teacher_id in teacher_ids:
            prob = float(probs[teacher_id][row])
            trusted = decide_trust(prob, threshold)
            selection.decisions.append(TrustDecision(key, teacher_id, prob, trusted, threshold))
            if not trusted:
                continue
            image, text = aligned[teacher_id]
            selection.quadruplets.append(Quadruplet(key[0], key[1], teacher_id,
                                                    Embedding(image[row]), Embedding(text[row])))
            summary.counts[teacher_id] += 1
            n_trusted += 1
        if n_trusted == 0:
            summary.dropped_pairs += 1

    summary.n_quadruplets = len(selection.quadruplets)
    for teacher_id in teacher_ids:
        summary.trust_rates[teacher_id] = summary.counts[teacher_id] / float(len(corpus))
        summary.mean_probs[teacher_id] = float(np.mean(probs[teacher_id]))
        logging.info('teacher %d: trusted on %d/%d pairs (mean p=%.3f)', teacher_id,
                     summary.counts[teacher_id], len(corpus), summary.mean_probs[teacher_id])
    logging.info('%d quadruplets, %d pairs dropped', summary.n_quadruplets, summary.dropped_pairs)
    return selection


def write_selection(selection, shard_dir, split='train', feature_dim=DEFAULT_DIM):
    """One shard per teacher (empty shards included); returns their paths."""
    paths = []
    for teacher_id in selection.summary.counts:
        path = shard_path(shard_dir, teacher_id, split)
        write_shard(path, (q for q in selection.quadruplets if q.teacher_id == teacher_id),
                    feature_dim)
        paths.append(path)
    selection.summary.write_csv(os.path.join(shard_dir, 'selection_%s.csv' % split))
    return paths
