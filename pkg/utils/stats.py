"""Resampling and rank statistics used by the evaluation reports."""
from __future__ import absolute_import, division, print_function

from concurrent.futures import ThreadPoolExecutor

import attr
import numpy as np
from scipy import stats

from core import EmptyInputError, MetricUndefinedError

MAX_REDRAWS = 10


@attr.s(frozen=True)
class BootstrapResult(object):
    point = attr.ib(converter=float)
    ci_low = attr.ib(converter=float)
    ci_high = attr.ib(converter=float)
    replicates = attr.ib(converter=int)
    samples = attr.ib(default=None, repr=False, eq=False)

    def __iter__(self):
        return iter((self.point, self.ci_low, self.ci_high))


def _as_columns(data):
    columns = data if isinstance(data, (tuple, list)) else (data,)
    columns = tuple(np.asarray(c) for c in columns)
    n = columns[0].shape[0]
    if n == 0:
        raise EmptyInputError('cannot bootstrap an empty sample')
    if any(c.shape[0] != n for c in columns):
        raise ValueError('bootstrap columns must share their first dimension')
    return columns, n


def _replicate(metric, columns, n, seed, index):
    for attempt in range(MAX_REDRAWS):
        rng = np.random.default_rng([seed, index, attempt])
        rows = rng.integers(0, n, size=n)
        try:
            return float(metric(*[c[rows] for c in columns]))
        except MetricUndefinedError:
            continue
    raise MetricUndefinedError('replicate %d undefined after %d redraws' % (index, MAX_REDRAWS))


def bootstrap_ci(metric, data, replicates=1000, level=0.95, seed=0, workers=1):
    """Percentile bootstrap interval of `metric(*data)`.

    Replicate r resamples rows with an RNG seeded by (seed, r, attempt), so
    the result does not depend on `workers`. A replicate on which the metric
    is undefined is redrawn up to MAX_REDRAWS times. The interval is widened
    to contain the point estimate when needed.
    """
    if not 0.0 < level < 1.0:
        raise ValueError('level must be in (0, 1)')
    columns, n = _as_columns(data)
    point = float(metric(*columns))
    if replicates <= 0:
        return BootstrapResult(point, point, point, 0)

    def run(index):
        return _replicate(metric, columns, n, seed, index)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = np.array(list(pool.map(run, range(replicates))))
    else:
        samples = np.array([run(i) for i in range(replicates)])

    alpha = 1.0 - level
    ci_low, ci_high = np.percentile(samples, [100.0 * alpha / 2, 100.0 * (1.0 - alpha / 2)])
    ci_low = min(float(ci_low), point)
    ci_high = max(float(ci_high), point)
    return BootstrapResult(point, ci_low, ci_high, replicates, samples)


def mann_whitney_u(sample_a, sample_b):
    """Returns (U for sample_a, two-sided p).

    U counts pairs with a > b plus half the ties. The p-value uses the normal
    approximation with tie correction; identical pooled values give p = 1.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyInputError('both samples must be non-empty')
    diff = a[:, None] - b[None, :]
    u = float(np.sum(diff > 0) + 0.5 * np.sum(diff == 0))
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return u, 1.0
    result = stats.mannwhitneyu(a, b, alternative='two-sided', use_continuity=True,
                                method='asymptotic')
    return u, float(min(1.0, result.pvalue))


def fold_ci(values, level=0.95):
    """(mean, low, high) t-interval over cross-validation fold outcomes."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError('no fold values')
    mean = float(np.mean(values))
    if values.size == 1 or np.all(values == values[0]):
        return mean, mean, mean
    half = stats.t.ppf(0.5 + level / 2, values.size - 1) * stats.sem(values)
    return mean, float(mean - half), float(mean + half)
