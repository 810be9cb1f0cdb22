import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mghs.metrics import (
    ConfusionCounts,
    aafe,
    append_metrics_csv,
    auc,
    confusion_counts,
    confusion_metrics,
    frobenius_loss,
    mcc,
    mean_aafe,
)


def _random_graphs(K, p, density, rng):
    a = rng.random((K, p, p)) < density
    a = np.triu(a, 1)
    return a | np.transpose(a, (0, 2, 1))


def test_perfect_recovery():
    rng = np.random.default_rng(0)
    truth = _random_graphs(2, 8, 0.3, rng)
    m = confusion_metrics(truth, truth)
    assert m == {"Acc": 1.0, "MCC": 1.0, "TPR": 1.0, "FPR": 0.0}


def test_mcc_arithmetic():
    assert mcc(2, 3, 1, 1) == pytest.approx(5 / 12, abs=0)
    c = ConfusionCounts(tp=2, tn=3, fp=1, fn=1)
    assert c.mcc == 5 / 12
    assert c.acc == 5 / 7 and c.tpr == 2 / 3 and c.fpr == 1 / 4
    assert mcc(0, 10, 0, 3) == 0.0
    assert mcc(5, 0, 0, 0) == 0.0


def test_counts_against_bruteforce():
    rng = np.random.default_rng(1)
    K, p = 2, 21  # 210 upper-triangle pairs per group
    est = _random_graphs(K, p, 0.3, rng)
    truth = _random_graphs(K, p, 0.2, rng)
    tp = tn = fp = fn = 0
    for k in range(K):
        for i in range(p):
            for j in range(i + 1, p):
                e, t = est[k, i, j], truth[k, i, j]
                tp += e and t
                tn += (not e) and (not t)
                fp += e and not t
                fn += (not e) and t
    c = confusion_counts(est, truth)
    assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
    assert c.tp + c.tn + c.fp + c.fn == K * p * (p - 1) // 2


def test_per_group_breakdown():
    rng = np.random.default_rng(2)
    est, truth = _random_graphs(3, 6, 0.4, rng), _random_graphs(3, 6, 0.4, rng)
    pooled, groups = confusion_metrics(est, truth, per_group=True)
    assert len(groups) == 3
    assert groups[1] == confusion_metrics(est[1], truth[1])
    with pytest.raises(ValueError):
        confusion_metrics(est, truth[:2])


def test_auc_examples():
    truth = np.array([0, 0, 1, 1, 0, 1], dtype=bool)
    assert auc(np.array([0.1, 0.2, 0.8, 0.9, 0.3, 0.7]), truth) == 1.0
    assert auc(truth.astype(float), truth) == 1.0
    rng = np.random.default_rng(3)
    t = rng.random(10_000) < 0.3
    assert auc(rng.random(10_000), t) == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ValueError):
        auc(np.ones(4), np.ones(4, dtype=bool))
    with pytest.raises(ValueError):
        auc(np.ones(4), np.zeros(4, dtype=bool))
    with pytest.raises(ValueError):
        auc(np.array([0.1, np.nan]), np.array([True, False]))


def test_auc_against_pairwise_count():
    rng = np.random.default_rng(4)
    s = rng.integers(0, 5, size=60).astype(float)
    t = rng.random(60) < 0.4
    pos, neg = s[t], s[~t]
    ref = np.mean([(a > b) + 0.5 * (a == b) for a in pos for b in neg])
    assert auc(s, t) == pytest.approx(ref, abs=1e-12)


def test_auc_on_matrices_uses_upper_triangle():
    rng = np.random.default_rng(5)
    truth = _random_graphs(2, 7, 0.4, rng)
    scores = rng.random((2, 7, 7))
    iu = np.triu_indices(7, 1)
    flat = auc(scores[:, iu[0], iu[1]].ravel(), truth[:, iu[0], iu[1]].ravel())
    assert auc(scores, truth) == flat


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_metrics_permutation_and_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    p = 9
    truth = _random_graphs(2, p, 0.35, rng)
    truth[:, 0, 1] = truth[:, 1, 0] = True
    truth[:, 0, 2] = truth[:, 2, 0] = False
    est = _random_graphs(2, p, 0.35, rng)
    scores = rng.random((2, p, p))
    scores = scores + np.transpose(scores, (0, 2, 1))
    perm = rng.permutation(p)
    P = lambda a: a[:, perm][:, :, perm]
    assert confusion_metrics(P(est), P(truth)) == pytest.approx(confusion_metrics(est, truth), nan_ok=True)
    assert auc(P(scores), P(truth)) == pytest.approx(auc(scores, truth), abs=1e-12)
    assert auc(np.exp(3 * scores), truth) == pytest.approx(auc(scores, truth), abs=1e-12)
    om = np.stack([np.eye(p) + 0.1 * s for s in scores])
    assert frobenius_loss(P(om), P(np.eye(p)[None].repeat(2, 0))) == pytest.approx(
        frobenius_loss(om, np.eye(p)[None].repeat(2, 0)))


def test_frobenius_loss():
    rng = np.random.default_rng(6)
    om = rng.random((3, 4, 4))
    assert frobenius_loss(om, om) == 0.0
    assert frobenius_loss(np.eye(3) + np.eye(3), np.eye(3)) == pytest.approx(math.sqrt(3))
    other = rng.random((3, 4, 4))
    ref = np.mean([math.sqrt(sum((om[k, i, j] - other[k, i, j]) ** 2 for i in range(4) for j in range(4)))
                   for k in range(3)])
    assert frobenius_loss(om, other) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        frobenius_loss(om, other[:2])


def test_aafe_deterministic_predictor_is_zero():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 5))
    sigma = a @ a.T + np.eye(5)
    pred, targ = [0, 1, 2], [3, 4]
    coef = np.linalg.solve(sigma[np.ix_(pred, pred)], sigma[np.ix_(pred, targ)])
    y1 = rng.standard_normal((40, 3))
    y = np.zeros((40, 5))
    y[:, pred] = y1
    y[:, targ] = y1 @ coef
    assert aafe(y, np.linalg.inv(sigma), pred, targ) == pytest.approx(0.0, abs=1e-12)


def test_aafe_identity_precision():
    rng = np.random.default_rng(8)
    y = rng.standard_normal((30, 4))
    assert aafe(y, np.eye(4), [0, 1], [2, 3]) == pytest.approx(np.mean(np.abs(y[:, 2:])))


def test_aafe_small_case_against_direct_solve():
    omega = np.array([[2.0, -0.5, 0.3], [-0.5, 1.5, 0.2], [0.3, 0.2, 1.0]])
    y = np.array([[1.0, -2.0, 0.5], [0.3, 0.1, -1.0]])
    sigma = np.linalg.inv(omega)
    # predict column 1 from columns 0 and 2
    b = np.linalg.solve(sigma[np.ix_([0, 2], [0, 2])], sigma[[0, 2], 1])
    pred = y[:, [0, 2]] @ b
    expected = np.mean(np.abs(y[:, 1] - pred))
    assert aafe(y, omega, [0, 2], [1]) == pytest.approx(expected, abs=1e-14)
    assert mean_aafe([y, y], [omega, omega], [0, 2], [1]) == pytest.approx(expected)
    with pytest.raises(ValueError):
        aafe(y, omega, [0], [1])


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    append_metrics_csv(path, {"method": "a", "MCC": 0.5})
    append_metrics_csv(path, {"method": "b", "AUC": 0.7})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("method,scenario,replicate,Acc,MCC")
    assert len(lines) == 3
