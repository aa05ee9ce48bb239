"""Ranking metrics for binary classifiers.

Both metrics consume raw scores; only the induced ordering matters, so any
strictly monotone rescaling of the scores leaves the results unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import MetricError


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, with tied values sharing the mean of their rank span."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve via the rank-sum identity.

    Ties between a positive and a negative score count one half, which matches
    the trapezoidal area of the curve through the tie block.
    """
    y = np.asarray(labels, dtype=np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.size != s.size:
        raise MetricError(f"labels and scores disagree: {y.size} vs {s.size}")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc needs both classes present")
    ranks = _midranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(labels, scores) -> float:
    """Mean of precision@k over the ranks k at which positives occur.

    Ranking is by descending score; among equal scores the original sample
    order is kept, so the result is deterministic for a fixed input order.
    """
    y = np.asarray(labels, dtype=np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.size != s.size:
        raise MetricError(f"labels and scores disagree: {y.size} vs {s.size}")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise MetricError("average_precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    hits = y[order] == 1
    ks = np.flatnonzero(hits) + 1
    precisions = np.cumsum(hits)[ks - 1] / ks
    return float(precisions.sum() / n_pos)
