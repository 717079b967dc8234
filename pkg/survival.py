"""Outcome prediction from bags of instance features.

Discrete-time survival: event times are cut into equal-probability
intervals of the Kaplan-Meier curve, an ABMIL model predicts one event
probability per interval, and the implied survival curves are scored with
C-index, time-dependent C-index, IBS and INBLL. Risk groups come from a
median split and are compared with the log-rank test.
"""
from __future__ import absolute_import, division, print_function

import json
import math
import os
from collections import OrderedDict

import attr
import numpy as np
import tensorflow as tf
from absl import logging
from scipy.special import expit, softmax
from scipy.stats import chi2
from sklearn.model_selection import StratifiedKFold
from tqdm import trange

from core import (ConfigError, Embedding, EmptyInputError, MetricUndefinedError,
                  NoEventsError, NonFiniteError, ShapeMismatchError, TrainingDivergedError)
from evaluation import EvalReport, MetricEstimate, macro_auc
from feature_store import read_bag_shard, write_bag_shard
from models.mil import MILModel, pad_bags

P_CLIP = 1e-7


def _check_duration(instance, attribute, value):
    if not math.isfinite(value) or value < 0:
        raise ValueError('duration must be finite and >= 0, got %r' % value)


def _check_bag(instance, attribute, value):
    if value.ndim != 2 or value.shape[0] == 0:
        raise EmptyInputError('bag must be a non-empty [instances, dim] array')


def _as_bag(bag):
    if len(bag) and isinstance(bag[0], Embedding):
        bag = [e.values for e in bag]
    return np.asarray(bag, dtype=np.float32)


@attr.s(frozen=True, eq=False)
class SurvivalRecord(object):
    subject_id = attr.ib(converter=int)
    duration = attr.ib(converter=float, validator=_check_duration)
    event = attr.ib(converter=bool)
    bag = attr.ib(converter=_as_bag, validator=_check_bag)
    report = attr.ib(default=None)
    report_text = attr.ib(default=None)


def _columns(records):
    durations = np.array([r.duration for r in records], dtype=np.float64)
    events = np.array([r.event for r in records], dtype=bool)
    return durations, events


def _durations_events(group):
    if isinstance(group, tuple) and len(group) == 2 and not isinstance(group[0], SurvivalRecord):
        return np.asarray(group[0], dtype=np.float64), np.asarray(group[1], dtype=bool)
    return _columns(group)


# Kaplan-Meier and interval grids

@attr.s(frozen=True)
class KaplanMeier(object):
    """Right-continuous product-limit curve over the distinct event times."""
    times = attr.ib(converter=np.asarray)
    survival = attr.ib(converter=np.asarray)
    at_risk = attr.ib(converter=np.asarray)
    events = attr.ib(converter=np.asarray)
    max_time = attr.ib(converter=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side='right') - 1
        values = np.where(idx >= 0, self.survival[np.clip(idx, 0, None)] if self.times.size else 1.0,
                          1.0)
        return values

    @property
    def has_events(self):
        return self.times.size > 0

    @property
    def min_survival(self):
        return float(self.survival[-1]) if self.has_events else 1.0


def km_estimate(durations, events):
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if durations.size == 0:
        raise EmptyInputError('Kaplan-Meier needs at least one subject')
    if durations.shape != events.shape:
        raise ShapeMismatchError('durations and events differ in length')
    if not np.all(np.isfinite(durations)):
        raise NonFiniteError('durations must be finite')
    if np.any(durations < 0):
        raise ValueError('durations must be >= 0')
    times = np.unique(durations[events])
    at_risk = np.array([np.sum(durations >= t) for t in times], dtype=np.int64)
    n_events = np.array([np.sum((durations == t) & events) for t in times], dtype=np.int64)
    survival = np.cumprod(1.0 - n_events / at_risk.astype(np.float64))
    return KaplanMeier(times, survival, at_risk, n_events, float(np.max(durations)))


def _strictly_increasing(instance, attribute, value):
    if value.ndim != 1 or value.shape[0] < 1:
        raise ConfigError('an interval grid needs at least one cut point')
    if np.any(value < 0) or np.any(np.diff(value) <= 0):
        raise ConfigError('cut points must be non-negative and strictly increasing')


@attr.s(frozen=True)
class IntervalGrid(object):
    """Cut points t_1 < ... < t_J; interval j covers (t_{j-1}, t_j] with t_0 = 0."""
    cuts = attr.ib(converter=lambda x: np.asarray(x, dtype=np.float64),
                   validator=_strictly_increasing)

    @property
    def n_intervals(self):
        return int(self.cuts.shape[0])

    @property
    def horizon(self):
        return float(self.cuts[-1])

    def interval_of(self, durations):
        """Interval index per duration; n_intervals for durations past the last cut."""
        return np.searchsorted(self.cuts, np.asarray(durations, dtype=np.float64), side='left')


def equal_probability_cuts(km, n_intervals):
    """Earliest times where the KM curve falls to 1 - j/J (1 - S_min), plus the max time."""
    if n_intervals < 1:
        raise ConfigError('need at least one interval')
    if not km.has_events:
        raise NoEventsError('cannot place equal-probability cuts without events')
    drop = 1.0 - km.min_survival
    cuts = []
    for j in range(1, n_intervals):
        level = 1.0 - j / float(n_intervals) * drop
        cuts.append(km.times[np.flatnonzero(km.survival <= level + 1e-12)[0]])
    cuts.append(km.max_time)
    unique = np.unique(cuts)
    if unique.shape[0] < n_intervals:
        logging.warning('collapsed %d duplicate cut points; using %d intervals',
                        n_intervals - unique.shape[0], unique.shape[0])
    return IntervalGrid(unique)


def interval_targets(durations, events, grid):
    """(y, mask), both [n, J]. Events mark their interval; censored subjects
    only contribute the intervals they fully survived."""
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    n_intervals = grid.n_intervals
    idx = grid.interval_of(durations)[:, np.newaxis]
    columns = np.arange(n_intervals)[np.newaxis, :]
    past_end = idx >= n_intervals
    y = ((columns == idx) & events[:, np.newaxis] & ~past_end).astype(np.float64)
    mask = np.where(past_end, True,
                    np.where(events[:, np.newaxis], columns <= idx, columns < idx))
    return y, mask.astype(np.float64)


# Attention pooling

def abmil_aggregate(bag, params):
    """Bag embedding sum_k a_k h_k with a = softmax_k(w . tanh(V h_k))."""
    bag = np.asarray(_as_bag(bag) if len(bag) else bag, dtype=np.float64)
    if bag.ndim != 2 or bag.shape[0] == 0:
        raise EmptyInputError('cannot aggregate an empty bag')
    hidden = np.tanh(bag.dot(params.V.T))
    if params.gated:
        hidden = hidden * expit(bag.dot(params.U.T))
    weights = softmax(hidden.dot(params.w))
    return weights.dot(bag), weights


# Predictions and metrics

def _check_hazards(instance, attribute, value):
    if value.ndim != 2:
        raise ShapeMismatchError('hazards must be [subjects, intervals]')
    if np.any(value < 0) or np.any(value > 1):
        raise ValueError('interval event probabilities must lie in [0, 1]')


@attr.s(frozen=True)
class SurvivalPrediction(object):
    hazards = attr.ib(converter=lambda x: np.asarray(x, dtype=np.float64),
                      validator=_check_hazards)

    @property
    def survival(self):
        """S_i(t_j) = prod_{u <= j} (1 - p_{i,u})."""
        return np.cumprod(1.0 - self.hazards, axis=1)

    @property
    def risk(self):
        """Higher means an earlier expected event."""
        return np.sum(1.0 - self.survival, axis=1)


def survival_at(survival, grid, times):
    """Step evaluation [n, len(times)]: column j holds on (t_{j-1}, t_j], 1 before 0."""
    survival = np.asarray(survival, dtype=np.float64)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    idx = np.clip(grid.interval_of(times), 0, grid.n_intervals - 1)
    values = survival[:, idx]
    return np.where(times[np.newaxis, :] <= 0, 1.0, values)


def c_index(risks, durations, events, higher_risk_earlier=True):
    """Harrell's C: pairs with d_i < d_j and event_i; ties in risk count 1/2."""
    risks = np.asarray(risks, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if not risks.shape == durations.shape == events.shape:
        raise ShapeMismatchError('risks, durations and events differ in length')
    if not higher_risk_earlier:
        risks = -risks
    comparable = (durations[:, None] < durations[None, :]) & events[:, None]
    n_comparable = np.sum(comparable)
    if n_comparable == 0:
        raise MetricUndefinedError('no comparable pairs')
    concordant = np.sum(comparable & (risks[:, None] > risks[None, :]))
    ties = np.sum(comparable & (risks[:, None] == risks[None, :]))
    return float((concordant + 0.5 * ties) / n_comparable)


def c_index_td(survival, durations, events, grid):
    """Pooled over grid times t: pairs with d_i <= t < d_j and event_i,
    concordant when S_i(t) < S_j(t)."""
    survival = np.asarray(survival, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if survival.shape != (durations.shape[0], grid.n_intervals):
        raise ShapeMismatchError('survival must be [subjects, %d]' % grid.n_intervals)
    numerator = 0.0
    denominator = 0
    for j, t in enumerate(grid.cuts):
        comparable = ((durations[:, None] <= t) & (t < durations[None, :]) & events[:, None])
        s = survival[:, j]
        numerator += np.sum(comparable & (s[:, None] < s[None, :]))
        numerator += 0.5 * np.sum(comparable & (s[:, None] == s[None, :]))
        denominator += np.sum(comparable)
    if denominator == 0:
        raise MetricUndefinedError('no comparable pairs at any grid time')
    return float(numerator / denominator)


def ibs(survival, durations, events, horizon, grid):
    """(1/T) integral over [0, T] of mean_i (S_i(t) - 1(T_i > t))^2.

    The integrand is piecewise constant between grid cuts and observed
    durations, so it is evaluated at the midpoint of each piece. Censored
    subjects leave the mean after their censoring time.
    """
    if not horizon > 0:
        raise ConfigError('horizon must be > 0')
    survival = np.asarray(survival, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if durations.size == 0:
        raise EmptyInputError('empty cohort')
    points = np.concatenate([[0.0, horizon], grid.cuts, durations])
    points = np.unique(np.clip(points, 0.0, horizon))
    mids = 0.5 * (points[:-1] + points[1:])
    widths = np.diff(points)
    predicted = survival_at(survival, grid, mids)
    total = 0.0
    for k, (mid, width) in enumerate(zip(mids, widths)):
        keep = events | (durations > mid)
        if not np.any(keep):
            continue
        status = (durations > mid).astype(np.float64)
        total += width * np.mean(np.square(predicted[keep, k] - status[keep]))
    return float(total / horizon)


def inbll(probs, outcomes, mask=None):
    """-(1/N) sum_i sum_t mask [y log p + (1 - y) log(1 - p)], p clipped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    mask = np.ones_like(probs) if mask is None else np.asarray(mask, dtype=np.float64)
    if not probs.shape == outcomes.shape == mask.shape:
        raise ShapeMismatchError('probabilities, outcomes and mask differ in shape')
    probs = np.atleast_2d(np.clip(probs, P_CLIP, 1.0 - P_CLIP))
    outcomes = np.atleast_2d(outcomes)
    mask = np.atleast_2d(mask)
    ll = outcomes * np.log(probs) + (1.0 - outcomes) * np.log(1.0 - probs)
    return float(-np.sum(mask * ll) / probs.shape[0])


def median_stratify(risks):
    """(high, low) index arrays: high = risk > median, low = risk <= median."""
    risks = np.asarray(risks, dtype=np.float64)
    if risks.size < 2:
        raise EmptyInputError('need at least two subjects to stratify')
    median = np.median(risks)
    high = np.flatnonzero(risks > median)
    low = np.flatnonzero(risks <= median)
    if high.size == 0 or low.size == 0:
        raise MetricUndefinedError('risk scores do not split at the median')
    return high, low


@attr.s(frozen=True)
class LogRankResult(object):
    statistic = attr.ib(converter=float)
    p_value = attr.ib(converter=float)
    observed = attr.ib(converter=float)
    expected = attr.ib(converter=float)

    def __iter__(self):
        return iter((self.statistic, self.p_value))


def logrank_test(group_a, group_b):
    """Two-group log-rank chi-square (1 dof). Groups are record lists or
    (durations, events) tuples."""
    d_a, e_a = _durations_events(group_a)
    d_b, e_b = _durations_events(group_b)
    if d_a.size == 0 or d_b.size == 0:
        raise EmptyInputError('both groups need at least one subject')
    durations = np.concatenate([d_a, d_b])
    events = np.concatenate([e_a, e_b])
    in_a = np.concatenate([np.ones(d_a.size, bool), np.zeros(d_b.size, bool)])
    times = np.unique(durations[events])
    if times.size == 0:
        raise NoEventsError('log-rank test needs at least one event')
    observed = expected = variance = 0.0
    for t in times:
        at_risk = durations >= t
        n = float(np.sum(at_risk))
        n_a = float(np.sum(at_risk & in_a))
        dead = (durations == t) & events
        d = float(np.sum(dead))
        observed += np.sum(dead & in_a)
        expected += d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0)
    statistic = (observed - expected) ** 2 / variance if variance > 0 else 0.0
    return LogRankResult(statistic, chi2.sf(statistic, 1), observed, expected)


# Cohorts

def synth_cohort(n_subjects=200, seed=0, feature_dim=32, bag_size_range=(8, 16),
                 censor_rate=0.2, report_dim=0, report_signal=0.0, key_fraction=0.5):
    """Planted two-group cohort.

    Half the subjects are high risk. A subject's image risk is written along
    one direction into a fraction of its instances; an optional report
    vector carries an independent risk component scaled by `report_signal`.
    """
    rng = np.random.default_rng([seed, 17])
    groups = rng.permutation(np.arange(n_subjects) % 2)
    risk_direction = rng.standard_normal(feature_dim)
    risk_direction /= np.linalg.norm(risk_direction)
    image_risk = 1.5 * (2 * groups - 1) + 0.5 * rng.standard_normal(n_subjects)
    report_risk = rng.standard_normal(n_subjects) if report_dim else np.zeros(n_subjects)
    report_direction = rng.standard_normal(max(report_dim, 1))
    report_direction /= np.linalg.norm(report_direction)
    total_risk = image_risk + report_signal * report_risk
    durations = 10.0 * np.exp(-0.5 * total_risk + 0.1 * rng.standard_normal(n_subjects))
    censored = rng.random(n_subjects) < censor_rate
    if np.all(censored):
        censored[0] = False
    durations = np.where(censored, durations * rng.uniform(0.2, 1.0, n_subjects), durations)

    records = []
    for i in range(n_subjects):
        k = int(rng.integers(bag_size_range[0], bag_size_range[1] + 1))
        bag = 0.5 * rng.standard_normal((k, feature_dim))
        n_key = max(1, int(round(key_fraction * k)))
        bag[:n_key] += image_risk[i] * risk_direction
        bag = bag[rng.permutation(k)]
        report = None
        if report_dim:
            report = (report_risk[i] * report_direction +
                      0.1 * rng.standard_normal(report_dim)).astype(np.float32)
        records.append(SurvivalRecord(i, durations[i], not censored[i], bag, report))
    return records


def synth_bags(n_bags=200, n_classes=2, seed=0, feature_dim=32, bag_size_range=(8, 16),
               max_key=3):
    """Bags of class c hold 1..max_key instances shifted along a class direction."""
    rng = np.random.default_rng([seed, 23])
    labels = rng.permutation(np.arange(n_bags) % n_classes)
    directions = rng.standard_normal((n_classes, feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    bags = []
    for label in labels:
        k = int(rng.integers(bag_size_range[0], bag_size_range[1] + 1))
        bag = 0.5 * rng.standard_normal((k, feature_dim))
        n_key = int(rng.integers(1, max_key + 1))
        bag[:n_key] += 2.0 * directions[label]
        bags.append(bag[rng.permutation(k)].astype(np.float32))
    return bags, labels


def _world_bag(world, encoder, n_key, size, rng, key_class, background_class):
    labels = np.array([key_class] * n_key + [background_class] * (size - n_key))
    images = world.render(world.sample_latents(labels, rng), rng)
    return encoder.encode_images(images)[rng.permutation(size)]


def world_cohort(world, encoder, n_subjects=200, seed=0, bag_size_range=(8, 16),
                 censor_rate=0.2, report_signal=0.0):
    """Cohort whose instances are student embeddings of rendered patches.

    Subject risk grows with the share of class-1 patches in its bag. With
    `report_signal`, a report naming class 2 or class 3 adds an independent
    risk term and is embedded by the text student.
    """
    if report_signal and world.n_classes < 4:
        raise ConfigError('report signal needs a world with at least 4 classes')
    rng = np.random.default_rng([seed, 29])
    records = []
    for i in range(n_subjects):
        size = int(rng.integers(bag_size_range[0], bag_size_range[1] + 1))
        share = rng.uniform(0.05, 0.95)
        n_key = int(round(share * size))
        bag = _world_bag(world, encoder, n_key, size, rng, 1, 0)
        risk = 3.0 * n_key / size - 1.5
        report = report_text = None
        if report_signal:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            risk += report_signal * sign
            report_text = 'an image of %s' % world.class_names[2 if sign > 0 else 3]
            report = encoder.encode_texts([report_text])[0].astype(np.float32)
        duration = 10.0 * math.exp(-0.5 * risk + 0.1 * rng.standard_normal())
        event = rng.random() >= censor_rate
        if not event:
            duration *= rng.uniform(0.2, 1.0)
        records.append(SurvivalRecord(i, duration, event, bag, report, report_text))
    if not any(r.event for r in records):
        records[0] = attr.evolve(records[0], event=True)
    return records


def world_diagnosis_bags(world, encoder, n_bags=200, seed=0, bag_size_range=(8, 16)):
    """Positive bags hold a few class-1 patches among class-0 patches."""
    rng = np.random.default_rng([seed, 31])
    labels = rng.permutation(np.arange(n_bags) % 2)
    bags = []
    for label in labels:
        size = int(rng.integers(bag_size_range[0], bag_size_range[1] + 1))
        n_key = int(rng.integers(1, max(2, size // 4) + 1)) if label else 0
        bags.append(_world_bag(world, encoder, n_key, size, rng, 1, 0))
    return bags, labels


def write_cohort(records, out_dir):
    """cohort.jsonl plus one bag shard per subject; returns the cohort path."""
    os.makedirs(os.path.join(out_dir, 'bags'), exist_ok=True)
    path = os.path.join(out_dir, 'cohort.jsonl')
    with open(path, 'w') as f:
        for r in records:
            bag_path = os.path.join('bags', 'subject%06d.mkd' % r.subject_id)
            write_bag_shard(os.path.join(out_dir, bag_path), r.bag, r.subject_id)
            row = OrderedDict([('subject_id', r.subject_id), ('duration', r.duration),
                               ('event', r.event), ('bag_path', bag_path)])
            if r.report_text is not None:
                row['report_text'] = r.report_text
            if r.report is not None:
                row['report'] = [float(v) for v in r.report]
            f.write(json.dumps(row) + '\n')
    return path


def read_cohort(path, encode_report=None):
    """Reads cohort.jsonl; `encode_report(text)` embeds report texts without a stored vector."""
    root = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, 'r') as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            report = row.get('report')
            if report is None and row.get('report_text') and encode_report is not None:
                report = encode_report(row['report_text'])
            records.append(SurvivalRecord(row['subject_id'], row['duration'], row['event'],
                                          read_bag_shard(os.path.join(root, row['bag_path'])),
                                          None if report is None else np.asarray(report, np.float32),
                                          row.get('report_text')))
    return records


# Training

def _mil_inputs(bags, reports=None, max_size=None):
    instances, mask = pad_bags(bags, max_size)
    inputs = [instances, mask]
    if reports is not None:
        inputs.append(np.stack(reports).astype(np.float32))
    return inputs


def _record_inputs(records, use_report, max_size=None):
    reports = None
    if use_report:
        if any(r.report is None for r in records):
            raise ShapeMismatchError('use_report is set but some records have no report')
        reports = [r.report for r in records]
    return _mil_inputs([r.bag for r in records], reports, max_size)


def _train_mil(model, inputs, targets, loss_fn, epochs, lr, batch_size, seed, description,
               verbose=True):
    """Mini-batch Adam over (inputs, targets); returns per-epoch mean losses."""
    optimizer = tf.keras.optimizers.Adam(learning_rate=lr)
    n = inputs[0].shape[0]
    batch_size = min(batch_size, n)

    @tf.function
    def train_step(batch_inputs, batch_targets):
        with tf.GradientTape() as tape:
            loss = loss_fn(model(batch_inputs, training=True), *batch_targets)
        grads = tape.gradient(loss, model.trainable_variables)
        optimizer.apply_gradients([(g, v) for g, v in zip(grads, model.trainable_variables)
                                   if g is not None])
        return loss

    losses = []
    n_batches = n // batch_size
    t = trange(epochs, disable=not verbose, dynamic_ncols=True)
    t.set_description('| %s |' % description)
    for epoch in t:
        order = np.random.default_rng([seed, epoch]).permutation(n)
        loss_sum = 0.0
        for b in range(n_batches):
            rows = order[b * batch_size:(b + 1) * batch_size]
            loss = float(train_step([x[rows] for x in inputs], [y[rows] for y in targets]))
            if not np.isfinite(loss):
                logging.warning('nans found in %s loss', description)
                raise TrainingDivergedError('%s diverged at epoch %d' % (description, epoch))
            loss_sum += loss
        losses.append(loss_sum / max(1, n_batches))
        t.set_postfix(loss='%.3e' % losses[-1])
    return losses


def discrete_time_nll(logits, y, mask):
    """Mean over subjects of the masked per-interval Bernoulli log-loss."""
    bce = tf.nn.sigmoid_cross_entropy_with_logits(labels=tf.cast(y, logits.dtype), logits=logits)
    return tf.reduce_mean(tf.reduce_sum(bce * tf.cast(mask, logits.dtype), axis=1))


@attr.s(eq=False)
class SurvivalModel(object):
    model = attr.ib()
    grid = attr.ib()
    use_report = attr.ib(default=False)
    losses = attr.ib(factory=list)

    def predict(self, records, batch_size=256):
        inputs = _record_inputs(records, self.use_report)
        logits = np.concatenate([
            self.model([x[i:i + batch_size] for x in inputs], training=False).numpy()
            for i in range(0, inputs[0].shape[0], batch_size)])
        return SurvivalPrediction(expit(logits.astype(np.float64)))


def train_survival(records, grid, epochs=50, lr=1e-3, batch_size=16, hidden_dim=128,
                   attention_dim=64, gated=False, use_report=False, seed=0, verbose=True):
    if len(records) < 2:
        raise EmptyInputError('survival training needs at least 2 subjects')
    durations, events = _columns(records)
    if not np.any(events):
        raise NoEventsError('survival training needs at least one event')
    dims = set(r.bag.shape[1] for r in records)
    if len(dims) != 1:
        raise ShapeMismatchError('records have mixed instance dims %s' % sorted(dims))
    inputs = _record_inputs(records, use_report)
    y, mask = interval_targets(durations, events, grid)
    model = MILModel(grid.n_intervals, dims.pop(), hidden_dim, attention_dim, gated,
                     report_dim=inputs[2].shape[1] if use_report else 0, seed=seed)
    losses = _train_mil(model, inputs, [y.astype(np.float32), mask.astype(np.float32)],
                        discrete_time_nll, epochs, lr, batch_size, seed, 'survival', verbose)
    return SurvivalModel(model, grid, use_report, losses)


def survival_metrics(prediction, durations, events, grid):
    y, mask = interval_targets(durations, events, grid)
    return OrderedDict([
        ('c_index', c_index(prediction.risk, durations, events)),
        ('c_index_td', c_index_td(prediction.survival, durations, events, grid)),
        ('ibs', ibs(prediction.survival, durations, events, grid.horizon, grid)),
        ('inbll', inbll(prediction.hazards, y, mask)),
    ])


@attr.s
class SurvivalCV(object):
    fold_metrics = attr.ib(factory=list)
    report = attr.ib(default=None)
    high = attr.ib(default=None)
    low = attr.ib(default=None)
    logrank = attr.ib(default=None)
    km_by_group = attr.ib(factory=OrderedDict)

    def mean(self, name):
        return float(np.mean([m[name] for m in self.fold_metrics]))


def cross_validate_survival(records, n_intervals=4, folds=5, seed=0, use_report=False,
                            level=0.95, **train_options):
    """Event-stratified k-fold CV. Each test fold is split at its own median
    risk; the pooled groups get a log-rank test and KM curves."""
    durations, events = _columns(records)
    if not np.any(events):
        raise NoEventsError('cross-validation needs at least one event')
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    result = SurvivalCV()
    high, low = [], []
    for fold, (train_rows, test_rows) in enumerate(splitter.split(durations, events)):
        train_records = [records[i] for i in train_rows]
        test_records = [records[i] for i in test_rows]
        grid = equal_probability_cuts(km_estimate(durations[train_rows], events[train_rows]),
                                      n_intervals)
        model = train_survival(train_records, grid, use_report=use_report, seed=seed + fold,
                               **train_options)
        prediction = model.predict(test_records)
        metrics = survival_metrics(prediction, durations[test_rows], events[test_rows], grid)
        logging.info('fold %d: %s', fold, ', '.join('%s=%.4f' % kv for kv in metrics.items()))
        result.fold_metrics.append(metrics)
        fold_high, fold_low = median_stratify(prediction.risk)
        high.extend(test_rows[fold_high])
        low.extend(test_rows[fold_low])

    result.high = np.sort(np.array(high))
    result.low = np.sort(np.array(low))
    result.logrank = logrank_test((durations[result.high], events[result.high]),
                                  (durations[result.low], events[result.low]))
    result.km_by_group['high'] = km_estimate(durations[result.high], events[result.high])
    result.km_by_group['low'] = km_estimate(durations[result.low], events[result.low])

    report = EvalReport('survival_report' if use_report else 'survival')
    for name in result.fold_metrics[0]:
        report.add(name, MetricEstimate.from_folds([m[name] for m in result.fold_metrics], level))
    report.details['folds'] = folds
    report.details['logrank_statistic'] = result.logrank.statistic
    report.details['logrank_p'] = result.logrank.p_value
    report.details['n_high'] = int(result.high.size)
    report.details['n_low'] = int(result.low.size)
    result.report = report
    return result


# Supervised diagnosis

def _classification_loss(logits, labels):
    return tf.reduce_mean(tf.nn.sparse_softmax_cross_entropy_with_logits(
        labels=tf.cast(labels, tf.int64), logits=logits))


def train_mil_classifier(bags, labels, n_classes=None, epochs=50, lr=1e-3, batch_size=16,
                         hidden_dim=128, attention_dim=64, gated=False, seed=0, verbose=True):
    labels = np.asarray(labels, dtype=np.int64)
    if len(bags) != labels.shape[0]:
        raise ShapeMismatchError('%d bags for %d labels' % (len(bags), labels.shape[0]))
    if np.unique(labels).shape[0] < 2:
        raise MetricUndefinedError('diagnosis needs at least two classes')
    n_classes = n_classes or int(labels.max()) + 1
    inputs = _mil_inputs(bags)
    model = MILModel(n_classes, inputs[0].shape[2], hidden_dim, attention_dim, gated, seed=seed)
    _train_mil(model, inputs, [labels], _classification_loss, epochs, lr, batch_size, seed,
               'diagnosis', verbose)
    return model


def predict_mil_classifier(model, bags, batch_size=256):
    inputs = _mil_inputs(bags)
    logits = np.concatenate([model([x[i:i + batch_size] for x in inputs], training=False).numpy()
                             for i in range(0, inputs[0].shape[0], batch_size)])
    return softmax(logits.astype(np.float64), axis=1)


def evaluate_mil_classifier(model, bags, labels):
    """(class probabilities, macro one-vs-rest AUC)."""
    probs = predict_mil_classifier(model, bags)
    return probs, macro_auc(probs, labels)
