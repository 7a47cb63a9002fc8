"""AUROC / AUPRC against brute-force oracles and invariances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sessiongad.metrics import MetricError, auprc, auroc


def auroc_oracle(scores, labels):
    """All positive/negative pairs, ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def auprc_oracle(scores, labels):
    """Precision summed at each positive's rank, stable descending order."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / sum(labels)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_equal_scores(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_worked_example(self):
        # pairs: (0.9,0.8)=1, (0.9,0.1)=1, (0.3,0.8)=0, (0.3,0.1)=1 -> 3/4
        assert auroc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75

    def test_single_class_raises(self):
        with pytest.raises(MetricError):
            auroc([0.1, 0.2], [1, 1])

    def test_matches_oracle_with_ties(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = rng.integers(3, 25)
            scores = rng.integers(0, 5, size=n).astype(float)  # many ties
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                continue
            assert auroc(scores, labels) == pytest.approx(
                auroc_oracle(scores.tolist(), labels.tolist()), abs=1e-12)

    @given(st.lists(st.tuples(st.floats(-100, 100).map(lambda x: round(x, 3)),
                              st.integers(0, 1)),
                    min_size=4, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_monotone_transform_invariance(self, pairs):
        # scores on a coarse grid so the affine map cannot merge values
        scores = [p[0] for p in pairs]
        labels = [p[1] for p in pairs]
        if sum(labels) in (0, len(labels)):
            return
        base = auroc(scores, labels)
        transformed = auroc([3.0 * s + 7.0 for s in scores], labels)
        assert transformed == pytest.approx(base, abs=1e-12)

    def test_complement_rule_without_ties(self):
        rng = np.random.default_rng(7)
        scores = rng.permutation(20).astype(float)
        labels = rng.integers(0, 2, size=20)
        labels[0], labels[1] = 0, 1
        a = auroc(scores, labels)
        b = auroc(-scores, labels)
        assert a + b == pytest.approx(1.0, abs=1e-12)


class TestAuprc:
    def test_perfect_ranking(self):
        assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_single_positive_ranked_second(self):
        assert auprc([0.9, 0.3], [0, 1]) == 0.5

    def test_no_positive_raises(self):
        with pytest.raises(MetricError):
            auprc([0.1, 0.2], [0, 0])

    def test_matches_oracle_random_cases(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            n = rng.integers(2, 20)
            scores = np.round(rng.random(size=n), 1)  # induce ties
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                continue
            assert auprc(scores, labels) == pytest.approx(
                auprc_oracle(scores.tolist(), labels.tolist()), abs=1e-12)
