import numpy as np
import pytest

from cereg.metrics import (
    GroupReport,
    accuracy_score,
    crit_accuracy,
    crit_spurious_known,
    delta_prob,
    group_report,
    kappa_of,
    pick_best,
)


def test_kappa_is_agreement_rate():
    labels = np.array([1, 1, 0, 0, 1])
    spur = np.array([1, 0, 0, 1, 1])
    assert kappa_of(labels, spur) == pytest.approx(3 / 5)


def test_kappa_equals_majority_share():
    labels = np.array([1] * 9 + [0])
    spur = np.array([1] * 9 + [1])
    # |maj| / (|maj| + |min|)
    assert kappa_of(labels, spur) == pytest.approx(0.9)


def _report():
    #            cells: (y=1,a=1) maj, (y=0,a=0) maj, (y=1,a=0) min, (y=0,a=1) min
    labels = np.array([1, 1, 1, 1, 0, 0, 1, 1, 0, 0])
    spur = np.array([1, 1, 1, 1, 0, 0, 0, 0, 1, 1])
    probs = np.array([0.9, 0.8, 0.2, 0.9, 0.1, 0.9, 0.7, 0.1, 0.2, 0.8])
    return group_report(labels, spur, probs)


def test_group_report_cells_and_pools():
    r = _report()
    assert r.cell_acc[(1, 1)] == pytest.approx(3 / 4)
    assert r.cell_acc[(0, 0)] == pytest.approx(1 / 2)
    assert r.cell_acc[(1, 0)] == pytest.approx(1 / 2)
    assert r.cell_acc[(0, 1)] == pytest.approx(1 / 2)
    assert r.acc_majority == pytest.approx(4 / 6)  # pooled, not cell-averaged
    assert r.acc_minority == pytest.approx(2 / 4)
    assert r.acc_average == pytest.approx((4 / 6 + 2 / 4) / 2)
    assert r.acc_worst == pytest.approx(1 / 2)
    assert r.empty_cells == ()


def test_group_report_average_invariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        labels = (rng.random(50) < 0.5).astype(int)
        spur = (rng.random(50) < 0.5).astype(int)
        probs = rng.random(50)
        r = group_report(labels, spur, probs)
        assert r.acc_average == pytest.approx((r.acc_majority + r.acc_minority) / 2)
        finite = [v for v in r.cell_acc.values() if not np.isnan(v)]
        assert r.acc_worst == pytest.approx(min(finite))


def test_threshold_is_half():
    labels = np.array([1, 0])
    spur = np.array([1, 0])
    r = group_report(labels, spur, np.array([0.5, 0.499]))
    assert r.cell_acc[(1, 1)] == 1.0  # 0.5 predicts positive
    assert r.cell_acc[(0, 0)] == 1.0


def test_empty_cell_flagged_and_excluded():
    labels = np.array([1, 1, 0])
    spur = np.array([1, 1, 0])  # no minority examples at all
    r = group_report(labels, spur, np.array([0.9, 0.2, 0.1]))
    assert (1, 0) in r.empty_cells and (0, 1) in r.empty_cells
    assert r.acc_worst == pytest.approx(0.5)  # min over non-empty cells only
    assert np.isnan(r.acc_minority)


def test_delta_prob_absolute():
    p = np.array([0.9, 0.2, 0.4])
    q = np.array([0.5, 0.6, 0.4])
    assert delta_prob(p, q) == pytest.approx((0.4 + 0.4 + 0.0) / 3)
    assert delta_prob(q, p) == delta_prob(p, q)


def test_selection_criteria_values():
    assert crit_accuracy(0.87) == 0.87
    # frozen example: maj 0.9, min 0.7, delta_prob 0.2 -> (0.9+0.7+0.8)/3 = 0.8
    assert crit_spurious_known(0.9, 0.7, 0.2) == pytest.approx(0.8)


def test_pick_best_tie_breaks():
    entries = [
        {"score": 0.9, "R": 10.0, "epoch": 20},
        {"score": 0.9, "R": 1.0, "epoch": 30},
        {"score": 0.9, "R": 1.0, "epoch": 20},
        {"score": 0.8, "R": 0.0, "epoch": 10},
    ]
    best = pick_best(entries, "score")
    assert best["R"] == 1.0 and best["epoch"] == 20


def test_accuracy_score():
    assert accuracy_score(np.array([1, 0, 1]), np.array([1, 1, 1])) == pytest.approx(2 / 3)
