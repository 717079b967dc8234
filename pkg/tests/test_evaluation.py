from collections import OrderedDict
from unittest import mock

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

import evaluation
from core import ConfigError, EmptyInputError, MetricUndefinedError, normalize_rows
from evaluation import (EvalReport, MetricEstimate, PromptSet, accuracy, auc, class_embedding,
                        evaluate_linear_probe, evaluate_retrieval, evaluate_zero_shot, linear_probe,
                        macro_auc, recall_at_k, retrieval, retrieval_ranks, retrieval_report,
                        stratified_fraction, zero_shot_classify)


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def brute_rank(query, gallery, truth):
    sims = [float(np.dot(query, g)) for g in gallery]
    return sum(1 for j, s in enumerate(sims) if s > sims[truth] or (s == sims[truth] and j < truth))


class FakeEncoder(object):
    """Images are their own embeddings; prompts map through a fixed table."""

    def __init__(self, table):
        self.table = table

    def encode_images(self, images):
        return normalize_rows(np.asarray(images, dtype=np.float64))

    def encode_tokens(self, tokens):
        return normalize_rows(np.asarray(tokens, dtype=np.float64))

    def encode_texts(self, texts):
        return normalize_rows(np.stack([self.table[t] for t in texts]))


@pytest.fixture
def planted(rng):
    """Images near one of three orthogonal class directions."""
    labels = np.repeat(np.arange(3), 20)
    images = np.eye(3)[labels] * 3.0 + 0.3 * rng.standard_normal((60, 3))
    table = dict(('prompt %d %d' % (c, p), np.eye(3)[c] + 0.05 * p) for c in range(3)
                 for p in range(2))
    prompts = PromptSet(OrderedDict(('class%d' % c, ['prompt %d 0' % c, 'prompt %d 1' % c])
                                    for c in range(3)))
    return FakeEncoder(table), images, labels, prompts


class TestAUC:
    def test_matches_brute_force(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            scores = np.round(rng.standard_normal(n), 1)
            assert auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)

    def test_macro_matches_sklearn(self, rng):
        for _ in range(20):
            labels = np.concatenate([np.arange(4), rng.integers(0, 4, size=40)])
            logits = rng.standard_normal((44, 4))
            probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
            assert macro_auc(probs, labels) == pytest.approx(
                roc_auc_score(labels, probs, multi_class='ovr', average='macro'), abs=1e-9)

    def test_binary_matrix(self, rng):
        labels = np.array([0, 1, 0, 1, 1])
        scores = rng.standard_normal((5, 2))
        assert macro_auc(scores, labels) == pytest.approx(brute_auc(scores[:, 1], labels))

    def test_single_class_is_undefined(self):
        with pytest.raises(MetricUndefinedError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(MetricUndefinedError):
            macro_auc(np.ones((3, 2)), [0, 0, 0])

    def test_non_binary_labels(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [0, 2])

    def test_accuracy(self):
        assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75
        with pytest.raises(EmptyInputError):
            accuracy([], [])


class TestRetrieval:
    def test_ranks_match_brute_force(self, rng):
        for _ in range(10):
            queries = normalize_rows(rng.standard_normal((15, 6)))
            gallery = normalize_rows(rng.standard_normal((25, 6)))
            truth = rng.integers(0, 25, size=15)
            ranks = retrieval_ranks(queries, gallery, truth)
            assert ranks.tolist() == [brute_rank(q, gallery, t) for q, t in zip(queries, truth)]

    def test_ties_go_to_lower_index(self):
        gallery = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        ranks = retrieval_ranks(np.array([[1.0, 0.0], [1.0, 0.0]]), gallery, [0, 1])
        assert ranks.tolist() == [0, 1]

    def test_recall_at_k(self, rng):
        queries = normalize_rows(rng.standard_normal((30, 8)))
        gallery = normalize_rows(rng.standard_normal((60, 8)))
        truth = np.arange(30)
        recalls = retrieval(queries, gallery, truth, ks=(1, 10, 50))
        ranks = [brute_rank(q, gallery, t) for q, t in zip(queries, truth)]
        for k, value in recalls.items():
            assert value == pytest.approx(np.mean([r < k for r in ranks]))
        assert recalls[1] <= recalls[10] <= recalls[50]

    def test_identical_embeddings_give_full_recall(self, rng):
        x = normalize_rows(rng.standard_normal((50, 16)))
        report = retrieval_report(x, x)
        assert all(v == 1.0 for v in report['image_to_text'].values())
        assert all(v == 1.0 for v in report['text_to_image'].values())

    def test_gallery_smaller_than_k(self, rng):
        x = rng.standard_normal((5, 4))
        with pytest.raises(MetricUndefinedError):
            retrieval(x, x, np.arange(5), ks=(1, 10))

    def test_missing_truth(self, rng):
        x = rng.standard_normal((3, 4))
        with pytest.raises(MetricUndefinedError):
            retrieval_ranks(x, x, {0: 0, 1: 1})

    def test_evaluate_retrieval_names(self, rng):
        x = rng.standard_normal((20, 4))
        report = evaluate_retrieval(FakeEncoder({}), x, x, ks=(1, 10, 50), replicates=20)
        assert list(report.metrics) == ['image_to_text_recall@1', 'image_to_text_recall@10',
                                        'text_to_image_recall@1', 'text_to_image_recall@10']
        assert recall_at_k([0, 3, 12], 10) == pytest.approx(2 / 3.0)

    def test_oversize_k_is_logged(self, rng):
        x = rng.standard_normal((20, 4))
        with mock.patch.object(evaluation.logging, 'warning') as warning:
            evaluate_retrieval(FakeEncoder({}), x, x, ks=(1, 10, 50), replicates=20)
        warning.assert_called_once()
        assert warning.call_args[0][1] == [50]
        with mock.patch.object(evaluation.logging, 'warning') as warning:
            evaluate_retrieval(FakeEncoder({}), x, x, ks=(1, 10), replicates=20)
        warning.assert_not_called()

    def test_recall_non_decreasing_in_k(self, rng):
        for _ in range(5):
            queries = normalize_rows(rng.standard_normal((40, 6)))
            gallery = normalize_rows(queries + 0.8 * rng.standard_normal((40, 6)))
            recalls = list(retrieval(queries, gallery, np.arange(40), ks=range(1, 41)).values())
            assert all(a <= b for a, b in zip(recalls, recalls[1:]))
            assert recalls[-1] == 1.0


class TestZeroShot:
    def test_prompt_ensemble_is_unit_norm(self, planted):
        encoder, _, _, prompts = planted
        e = class_embedding(encoder, prompts.prompts['class1'])
        assert e.norm == pytest.approx(1.0)

    def test_planted_classes(self, planted):
        encoder, images, labels, prompts = planted
        result = zero_shot_classify(encoder, images, prompts)
        assert result.scores.shape == (60, 3)
        assert accuracy(result.predictions, labels) > 0.95
        report = evaluate_zero_shot(encoder, images, labels, prompts, replicates=50)
        assert report.metrics['auc'].point > 0.95
        assert report.details['classes'] == ['class0', 'class1', 'class2']

    def test_needs_two_classes(self, planted):
        encoder, images, _, _ = planted
        with pytest.raises(ConfigError):
            zero_shot_classify(encoder, images, PromptSet({'class0': ['prompt 0 0']}))

    def test_prompt_set_validation(self, tmp_path):
        with pytest.raises(EmptyInputError):
            PromptSet({'a': []})
        with pytest.raises(EmptyInputError):
            PromptSet({})
        prompts = PromptSet(OrderedDict([('zeta', ['z']), ('alpha', ['a'])]))
        path = str(tmp_path / 'prompts.json')
        prompts.save(path)
        assert PromptSet.load(path).class_names == ['zeta', 'alpha']


class TestLinearProbe:
    def test_stratified_fraction(self):
        labels = np.repeat([0, 1, 2], [100, 50, 10])
        rows = stratified_fraction(labels, 0.1, seed=1)
        assert np.bincount(labels[rows]).tolist() == [10, 5, 1]
        assert np.array_equal(rows, stratified_fraction(labels, 0.1, seed=1))
        with pytest.raises(MetricUndefinedError):
            stratified_fraction(labels, 0.01)

    def test_separable_features(self, rng):
        labels = np.repeat([0, 1, 2], 40)
        features = np.eye(3)[labels] * 2.0 + 0.2 * rng.standard_normal((120, 3))
        result = linear_probe(features[::2], labels[::2], features[1::2], labels[1::2], lr=5e-2,
                              epochs=30, batch_size=16)
        assert result.auc > 0.95
        assert result.n_train == 60

    def test_more_data_never_shrinks_training_set(self, rng):
        labels = np.repeat([0, 1, 2], 40)
        features = np.eye(3)[labels] * 2.0 + 0.2 * rng.standard_normal((120, 3))
        report = evaluate_linear_probe(features[::2], labels[::2], features[1::2], labels[1::2],
                                       fractions=(0.25, 0.5, 1.0), replicates=20, lr=5e-2,
                                       epochs=30, batch_size=16)
        sizes = [report.details['n_train@%g' % f] for f in (0.25, 0.5, 1.0)]
        assert sizes == sorted(sizes) and sizes[-1] == 60
        aucs = [report.metrics['auc@%g' % f].point for f in (0.25, 0.5, 1.0)]
        assert aucs[-1] >= aucs[0] - 0.02


class TestReports:
    def test_interval_must_contain_point(self):
        with pytest.raises(ValueError):
            MetricEstimate(0.5, 0.6, 0.7, 100)
        assert MetricEstimate(0.5, 0.5, 0.5, 0).point == 0.5

    def test_from_folds(self):
        e = MetricEstimate.from_folds([0.7, 0.8, 0.9])
        assert e.point == pytest.approx(0.8)
        assert e.ci_low < 0.8 < e.ci_high
        assert e.replicates == 3

    def test_save_and_load(self, tmp_path):
        report = EvalReport('zeroshot')
        report.add('auc', MetricEstimate(0.9, 0.85, 0.95, 1000))
        report.details['n_images'] = 64
        path = report.save(str(tmp_path / 'reports' / 'zeroshot.json'))
        loaded = EvalReport.load(path)
        assert loaded.task == 'zeroshot'
        assert loaded.metrics['auc'] == report.metrics['auc']
        assert loaded.details == {'n_images': 64}
