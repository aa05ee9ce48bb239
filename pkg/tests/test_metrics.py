import numpy as np
import pytest

from quarc.errors import MetricError
from quarc.metrics import average_precision, roc_auc


def auc_by_pairs(labels, scores):
    """Concordance count over all positive/negative pairs, ties worth 1/2."""
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def ap_by_loop(labels, scores):
    """Walk the ranking (stable, descending) and average precision at hits."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    acc = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            acc += hits / rank
    return acc / sum(labels)


def test_auc_hand_case():
    # scores 0.9,0.8,0.3,0.2 with labels 1,0,1,0: pairs (0.9,0.8)=1,
    # (0.9,0.2)=1, (0.3,0.8)=0, (0.3,0.2)=1 -> 3/4
    assert roc_auc([1, 0, 1, 0], [0.9, 0.8, 0.3, 0.2]) == pytest.approx(0.75)


def test_auc_perfect_and_inverted():
    y = [0, 0, 1, 1]
    assert roc_auc(y, [0.1, 0.2, 0.7, 0.9]) == 1.0
    assert roc_auc(y, [0.9, 0.7, 0.2, 0.1]) == 0.0


def test_auc_all_tied_is_half():
    assert roc_auc([0, 1, 0, 1, 1], [5.0] * 5) == pytest.approx(0.5)


def test_auc_matches_pair_count_on_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        # small integer scores force plenty of ties
        s = rng.integers(0, 6, size=n).astype(np.float64)
        assert roc_auc(y, s) == pytest.approx(auc_by_pairs(list(y), list(s)), abs=1e-12)


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(7)
    y = rng.integers(0, 2, size=40)
    y[0], y[1] = 0, 1
    s = rng.normal(size=40)
    base = roc_auc(y, s)
    assert roc_auc(y, np.exp(s)) == pytest.approx(base, abs=1e-12)
    assert roc_auc(y, 3.0 * s - 11.0) == pytest.approx(base, abs=1e-12)


def test_auc_rejects_degenerate_inputs():
    with pytest.raises(MetricError):
        roc_auc([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError):
        roc_auc([0, 0], [0.1, 0.2])
    with pytest.raises(MetricError):
        roc_auc([0, 1, 2], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError):
        roc_auc([0, 1], [0.1, 0.2, 0.3])


def test_ap_hand_case():
    # ranking: 0.9(+), 0.8(-), 0.3(+) -> precisions 1/1 and 2/3 -> mean 5/6
    got = average_precision([1, 0, 1], [0.9, 0.8, 0.3])
    assert got == pytest.approx(5.0 / 6.0)


def test_ap_perfect_ranking_is_one():
    assert average_precision([0, 1, 1, 0], [0.1, 0.9, 0.8, 0.2]) == 1.0


def test_ap_matches_loop_on_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        y = rng.integers(0, 2, size=n)
        if y.max() == 0:
            y[-1] = 1
        s = rng.integers(0, 6, size=n).astype(np.float64)
        assert average_precision(y, s) == pytest.approx(
            ap_by_loop(list(y), list(s)), abs=1e-12
        )


def test_ap_tie_break_keeps_input_order():
    # equal scores: the earlier sample ranks first, so putting the positive
    # first versus second changes the result
    assert average_precision([1, 0], [0.5, 0.5]) == 1.0
    assert average_precision([0, 1], [0.5, 0.5]) == pytest.approx(0.5)


def test_ap_rejects_no_positives():
    with pytest.raises(MetricError):
        average_precision([0, 0, 0], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError):
        average_precision([0, 2], [0.1, 0.2])
