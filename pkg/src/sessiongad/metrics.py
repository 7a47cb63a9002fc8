"""Ranking metrics for anomaly scores.

auroc is the Mann-Whitney form: the probability that a random positive
outscores a random negative, counting ties as one half.  auprc is average
precision: the mean, over positives, of precision at each positive's rank
in the descending-score order, with ties broken by stable input order.
"""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    """Labels do not contain the classes a metric needs."""


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be equal-length 1-D sequences")
    return s, y.astype(int)


def auroc(scores, labels) -> float:
    """Area under the ROC curve via average ranks (ties count 1/2)."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        # average rank for the tie block, 1-based
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[y == 1].sum())
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision over descending scores.

    Ties keep their input order (stable sort), so the value is exactly
    reproducible from (scores, labels) alone.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("auprc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    hits = y[order]
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    precision_at_pos = cum_pos[hits == 1] / ranks[hits == 1]
    return float(precision_at_pos.sum() / n_pos)
