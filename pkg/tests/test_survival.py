import math

import numpy as np
import pytest
import tensorflow as tf
from lifelines import KaplanMeierFitter
from lifelines.statistics import logrank_test as lifelines_logrank
from lifelines.utils import concordance_index

from core import (ConfigError, EmptyInputError, MetricUndefinedError, NoEventsError,
                  NonFiniteError, ShapeMismatchError)
from data_input import SyntheticWorld
from layers.attention import AttentionPooling
from survival import (IntervalGrid, SurvivalPrediction, SurvivalRecord, abmil_aggregate, c_index,
                      c_index_td, cross_validate_survival, equal_probability_cuts,
                      evaluate_mil_classifier, ibs, inbll, interval_targets, km_estimate,
                      logrank_test, median_stratify, read_cohort, survival_at, survival_metrics,
                      synth_bags, synth_cohort, train_mil_classifier, train_survival,
                      world_cohort, write_cohort)


def random_cohort(rng, n=40):
    durations = np.round(rng.exponential(5.0, size=n), 2) + 0.01
    events = rng.random(n) < 0.7
    events[0] = True
    return durations, events


class TestKaplanMeier:
    def test_three_events(self):
        km = km_estimate([1, 2, 3], [1, 1, 1])
        np.testing.assert_allclose(km.survival, [2 / 3.0, 1 / 3.0, 0.0])
        assert km(0.5) == 1.0
        assert km(2.5) == pytest.approx(1 / 3.0)

    def test_matches_lifelines(self, rng):
        for _ in range(5):
            durations, events = random_cohort(rng)
            km = km_estimate(durations, events)
            kmf = KaplanMeierFitter().fit(durations, events)
            np.testing.assert_allclose(km(km.times), kmf.survival_function_at_times(km.times).values,
                                       atol=1e-10)

    def test_censored_only(self):
        km = km_estimate([1.0, 2.0], [0, 0])
        assert not km.has_events
        assert km(5.0) == 1.0

    def test_bad_inputs(self):
        with pytest.raises(EmptyInputError):
            km_estimate([], [])
        with pytest.raises(NonFiniteError):
            km_estimate([1.0, np.nan], [1, 0])
        with pytest.raises(ValueError):
            km_estimate([-1.0], [1])


class TestIntervalGrid:
    def test_validation(self):
        with pytest.raises(ConfigError):
            IntervalGrid([])
        with pytest.raises(ConfigError):
            IntervalGrid([2.0, 1.0])
        with pytest.raises(ConfigError):
            IntervalGrid([-1.0, 1.0])

    def test_interval_of(self):
        grid = IntervalGrid([1.0, 2.0, 3.0])
        assert grid.interval_of([0.5, 1.0, 1.5, 3.0, 4.0]).tolist() == [0, 0, 1, 2, 3]
        assert grid.horizon == 3.0 and grid.n_intervals == 3

    def test_equal_probability_cuts(self, rng):
        durations, events = random_cohort(rng, 200)
        km = km_estimate(durations, events)
        grid = equal_probability_cuts(km, 4)
        assert grid.n_intervals == 4
        assert grid.horizon == pytest.approx(durations.max())
        assert np.all(np.diff(grid.cuts) > 0)
        drop = 1.0 - km.min_survival
        for j, cut in enumerate(grid.cuts[:-1], 1):
            assert km(cut) <= 1.0 - j / 4.0 * drop + 1e-12

    def test_duplicate_cuts_collapse(self):
        km = km_estimate([1.0, 1.0, 1.0, 5.0], [1, 1, 1, 0])
        assert equal_probability_cuts(km, 4).n_intervals < 4

    def test_cut_errors(self):
        km = km_estimate([1.0, 2.0], [1, 0])
        with pytest.raises(ConfigError):
            equal_probability_cuts(km, 0)
        with pytest.raises(NoEventsError):
            equal_probability_cuts(km_estimate([1.0, 2.0], [0, 0]), 2)

    def test_interval_targets(self):
        grid = IntervalGrid([1.0, 2.0, 3.0])
        y, mask = interval_targets([1.5, 1.5, 1.0, 5.0], [1, 0, 1, 1], grid)
        assert y.tolist() == [[0, 1, 0], [0, 0, 0], [1, 0, 0], [0, 0, 0]]
        assert mask.tolist() == [[1, 1, 0], [1, 0, 0], [1, 0, 0], [1, 1, 1]]


class TestAttentionPooling:
    def test_numpy_matches_layer(self, rng):
        for gated in (False, True):
            layer = AttentionPooling(8, gated=gated, seed=4)
            bag = rng.standard_normal((6, 5)).astype(np.float32)
            pooled, weights = layer([bag[np.newaxis], np.ones((1, 6), np.float32)])
            embedding, expected = abmil_aggregate(bag, layer.params())
            np.testing.assert_allclose(pooled.numpy()[0], embedding, atol=1e-5)
            np.testing.assert_allclose(weights.numpy()[0], expected, atol=1e-5)

    def test_weights_and_permutation(self, rng):
        layer = AttentionPooling(8, seed=1)
        layer([tf.zeros([1, 1, 5]), tf.ones([1, 1])])
        bag = rng.standard_normal((7, 5))
        embedding, weights = abmil_aggregate(bag, layer.params())
        assert weights.sum() == pytest.approx(1.0) and np.all(weights >= 0)
        order = rng.permutation(7)
        permuted, _ = abmil_aggregate(bag[order], layer.params())
        np.testing.assert_allclose(permuted, embedding, atol=1e-12)

    def test_single_instance(self, rng):
        layer = AttentionPooling(4, seed=2)
        layer([tf.zeros([1, 1, 3]), tf.ones([1, 1])])
        bag = rng.standard_normal((1, 3))
        embedding, weights = abmil_aggregate(bag, layer.params())
        np.testing.assert_allclose(embedding, bag[0])
        assert weights.tolist() == [1.0]

    def test_padding_gets_no_weight(self, rng):
        layer = AttentionPooling(4, seed=3)
        instances = rng.standard_normal((1, 5, 3)).astype(np.float32)
        mask = np.array([[1, 1, 1, 0, 0]], np.float32)
        _, weights = layer([instances, mask])
        np.testing.assert_allclose(weights.numpy()[0, 3:], 0.0)
        embedding, _ = abmil_aggregate(instances[0, :3], layer.params())
        pooled, _ = layer([instances, mask])
        np.testing.assert_allclose(pooled.numpy()[0], embedding, atol=1e-5)

    def test_empty_bag(self):
        layer = AttentionPooling(4)
        layer([tf.zeros([1, 1, 3]), tf.ones([1, 1])])
        with pytest.raises(EmptyInputError):
            abmil_aggregate(np.zeros((0, 3)), layer.params())


class TestPredictions:
    def test_survival_curve(self):
        prediction = SurvivalPrediction([[0.5, 0.5], [0.0, 1.0]])
        np.testing.assert_allclose(prediction.survival, [[0.5, 0.25], [1.0, 0.0]])
        np.testing.assert_allclose(prediction.risk, [1.25, 1.0])

    def test_hazards_must_be_probabilities(self):
        with pytest.raises(ValueError):
            SurvivalPrediction([[1.5]])
        with pytest.raises(ShapeMismatchError):
            SurvivalPrediction([0.5])

    def test_survival_at_steps(self):
        grid = IntervalGrid([1.0, 2.0])
        s = np.array([[0.8, 0.4]])
        assert survival_at(s, grid, [0.0, 0.5, 1.0, 1.5, 2.0, 9.0]).tolist() == \
            [[1.0, 0.8, 0.8, 0.4, 0.4, 0.4]]


def brute_c_index_td(survival, durations, events, grid):
    num = den = 0.0
    for j, t in enumerate(grid.cuts):
        for i in range(len(durations)):
            for k in range(len(durations)):
                if events[i] and durations[i] <= t < durations[k]:
                    den += 1
                    if survival[i, j] < survival[k, j]:
                        num += 1
                    elif survival[i, j] == survival[k, j]:
                        num += 0.5
    return num / den


def brute_ibs(survival, durations, events, horizon, grid, n=100000):
    ts = (np.arange(n) + 0.5) * horizon / n
    predicted = survival_at(survival, grid, ts)
    alive = durations[:, None] > ts[None, :]
    keep = events[:, None] | alive
    sq = np.where(keep, (predicted - alive) ** 2, 0.0)
    counts = keep.sum(axis=0)
    per_time = np.where(counts > 0, sq.sum(axis=0) / np.maximum(counts, 1), 0.0)
    return float(per_time.mean())


class TestMetrics:
    def test_c_index_example(self):
        assert c_index([0.9, 0.9, 0.1], [1, 2, 3], [1, 1, 1]) == pytest.approx(2.5 / 3.0)

    def test_c_index_matches_lifelines(self, rng):
        for _ in range(10):
            durations = rng.exponential(5.0, size=30)
            events = rng.random(30) < 0.7
            events[0] = True
            risks = rng.standard_normal(30)
            assert c_index(risks, durations, events) == pytest.approx(
                concordance_index(durations, -risks, events), abs=1e-9)
            assert c_index(risks, durations, events, higher_risk_earlier=False) == pytest.approx(
                concordance_index(durations, risks, events), abs=1e-9)

    def test_c_index_flips_with_risk_sign(self, rng):
        for _ in range(10):
            durations = rng.exponential(5.0, size=25)
            events = rng.random(25) < 0.6
            events[0] = True
            risks = rng.standard_normal(25)
            assert c_index(risks, durations, events) + c_index(-risks, durations, events) == \
                pytest.approx(1.0, abs=1e-12)

    def test_c_index_undefined(self):
        with pytest.raises(MetricUndefinedError):
            c_index([1.0, 2.0], [1.0, 2.0], [0, 0])

    def test_c_index_td_matches_brute_force(self, rng):
        grid = IntervalGrid([1.0, 3.0, 6.0])
        for _ in range(5):
            durations, events = random_cohort(rng, 25)
            survival = np.round(np.cumprod(rng.uniform(0.5, 1.0, (25, 3)), axis=1), 2)
            assert c_index_td(survival, durations, events, grid) == pytest.approx(
                brute_c_index_td(survival, durations, events, grid))

    def test_ibs_constant_half(self):
        horizon = 4.0
        value = ibs(np.array([[0.5]]), np.array([horizon / 2]), np.array([True]), horizon,
                    IntervalGrid([horizon]))
        assert value == pytest.approx(0.25)

    def test_ibs_matches_riemann_sum(self, rng):
        grid = IntervalGrid([1.0, 2.5, 6.0])
        durations, events = random_cohort(rng, 20)
        survival = np.cumprod(rng.uniform(0.4, 1.0, (20, 3)), axis=1)
        value = ibs(survival, durations, events, 6.0, grid)
        assert value == pytest.approx(brute_ibs(survival, durations, events, 6.0, grid),
                                      abs=1e-3)

    def test_ibs_needs_positive_horizon(self):
        with pytest.raises(ConfigError):
            ibs(np.ones((1, 1)), [1.0], [True], 0.0, IntervalGrid([1.0]))

    def test_inbll(self):
        assert inbll(np.full((3, 1), 0.5), np.array([[1], [0], [1]])) == pytest.approx(math.log(2))
        assert inbll([[0.0]], [[1.0]]) == pytest.approx(-math.log(1e-7))
        masked = inbll([[0.5, 0.0]], [[1.0, 1.0]], [[1.0, 0.0]])
        assert masked == pytest.approx(math.log(2))

    def test_inbll_rewards_confidence(self, rng):
        outcomes = (rng.random((10, 4)) < 0.5).astype(np.float64)
        mask = (rng.random((10, 4)) < 0.8).astype(np.float64)
        mask[0, 0] = 1.0
        values = [inbll(np.where(outcomes == 1.0, p, 1.0 - p), outcomes, mask)
                  for p in (0.5, 0.7, 0.9, 0.99)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_median_stratify(self):
        high, low = median_stratify([1.0, 2.0, 3.0, 4.0])
        assert high.tolist() == [2, 3] and low.tolist() == [0, 1]
        with pytest.raises(MetricUndefinedError):
            median_stratify([1.0, 1.0, 1.0])

    def test_logrank_matches_lifelines(self, rng):
        for _ in range(5):
            d_a, e_a = random_cohort(rng, 30)
            d_b, e_b = random_cohort(rng, 25)
            d_b = d_b * 1.5
            result = logrank_test((d_a, e_a), (d_b, e_b))
            expected = lifelines_logrank(d_a, d_b, e_a, e_b)
            assert result.statistic == pytest.approx(expected.test_statistic, rel=1e-8)
            assert result.p_value == pytest.approx(expected.p_value, rel=1e-6)

    def test_logrank_needs_events(self):
        with pytest.raises(NoEventsError):
            logrank_test(([1.0], [False]), ([2.0], [False]))

    def test_metrics_of_untrained_model(self):
        records = synth_cohort(40, seed=2, feature_dim=8)
        grid = equal_probability_cuts(km_estimate([r.duration for r in records],
                                                  [r.event for r in records]), 4)
        model = train_survival(records, grid, epochs=0, hidden_dim=8, attention_dim=4,
                               verbose=False)
        prediction = model.predict(records)
        durations = np.array([r.duration for r in records])
        events = np.array([r.event for r in records])
        metrics = survival_metrics(prediction, durations, events, grid)
        assert metrics['c_index'] == 0.5
        assert metrics['c_index_td'] == 0.5
        assert list(metrics) == ['c_index', 'c_index_td', 'ibs', 'inbll']


class TestCohorts:
    def test_synth_cohort_is_deterministic(self):
        a = synth_cohort(30, seed=4, feature_dim=8)
        b = synth_cohort(30, seed=4, feature_dim=8)
        assert [r.duration for r in a] == [r.duration for r in b]
        np.testing.assert_array_equal(a[3].bag, b[3].bag)

    def test_censoring_shortens_follow_up(self):
        records = synth_cohort(400, seed=1, feature_dim=8, censor_rate=0.2)
        censored = np.mean([not r.event for r in records])
        assert 0.1 < censored < 0.3
        assert all(8 <= r.bag.shape[0] <= 16 for r in records)

    def test_reports(self):
        records = synth_cohort(10, seed=0, feature_dim=8, report_dim=6, report_signal=1.0)
        assert all(r.report.shape == (6,) for r in records)

    def test_record_validation(self):
        with pytest.raises(ValueError):
            SurvivalRecord(0, -1.0, True, np.ones((2, 3)))
        with pytest.raises(EmptyInputError):
            SurvivalRecord(0, 1.0, True, np.zeros((0, 3)))

    def test_write_and_read(self, tmp_path):
        records = synth_cohort(6, seed=3, feature_dim=8, report_dim=4, report_signal=1.0)
        path = write_cohort(records, str(tmp_path))
        loaded = read_cohort(path)
        assert [r.subject_id for r in loaded] == [r.subject_id for r in records]
        assert [r.event for r in loaded] == [r.event for r in records]
        for a, b in zip(records, loaded):
            assert b.duration == pytest.approx(a.duration)
            np.testing.assert_array_equal(a.bag, b.bag)
            np.testing.assert_allclose(a.report, b.report, rtol=1e-6)

    def test_world_cohort_needs_four_classes(self):
        with pytest.raises(ConfigError):
            world_cohort(SyntheticWorld(seed=0, n_classes=2), None, 4, report_signal=1.0)

    def test_report_required(self):
        records = synth_cohort(10, seed=0, feature_dim=8)
        with pytest.raises(ShapeMismatchError):
            train_survival(records, IntervalGrid([1.0, 100.0]), epochs=1, use_report=True,
                           verbose=False)

    def test_needs_events(self):
        records = [SurvivalRecord(i, 1.0 + i, False, np.ones((2, 3))) for i in range(4)]
        with pytest.raises(NoEventsError):
            train_survival(records, IntervalGrid([10.0]), verbose=False)


@pytest.mark.slow
class TestOutcomeModels:
    options = dict(epochs=40, lr=2e-3, batch_size=16, hidden_dim=32, attention_dim=16,
                   verbose=False)

    def test_cross_validated_c_index(self):
        records = synth_cohort(200, seed=0)
        result = cross_validate_survival(records, n_intervals=4, folds=5, seed=0, **self.options)
        assert result.mean('c_index') >= 0.8
        assert result.report.task == 'survival'
        assert result.report.details['n_high'] + result.report.details['n_low'] == 200
        assert result.logrank.p_value < 0.05

    def test_report_fusion_helps(self):
        records = synth_cohort(200, seed=0, report_dim=16, report_signal=1.0)
        image_only = cross_validate_survival(records, seed=0, **self.options)
        fused = cross_validate_survival(records, seed=0, use_report=True, **self.options)
        assert fused.report.task == 'survival_report'
        assert fused.mean('c_index') >= image_only.mean('c_index')

    def test_diagnosis(self):
        bags, labels = synth_bags(200, n_classes=2, seed=0)
        model = train_mil_classifier(bags[:150], labels[:150], epochs=30, lr=2e-3, hidden_dim=32,
                                     attention_dim=16, verbose=False)
        probs, value = evaluate_mil_classifier(model, bags[150:], labels[150:])
        assert probs.shape == (50, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        assert value > 0.9
