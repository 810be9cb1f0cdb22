"""Graph-recovery and prediction metrics.

Edge-level metrics use the strict upper triangle of each group's matrix and
pool counts across groups unless asked for the per-group breakdown.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

__all__ = [
    "ConfusionCounts",
    "confusion_counts",
    "confusion_metrics",
    "mcc",
    "auc",
    "frobenius_loss",
    "aafe",
    "mean_aafe",
    "METRIC_COLUMNS",
    "append_metrics_csv",
]


def _as_groups(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"expected p x p or K x p x p matrices, got shape {a.shape}")
    return a


def _upper(a: np.ndarray) -> np.ndarray:
    iu, ju = np.triu_indices(a.shape[1], 1)
    return a[:, iu, ju]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.tn + self.fp + self.fn)

    @property
    def tpr(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else float("nan")

    @property
    def fpr(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else float("nan")

    @property
    def mcc(self) -> float:
        return mcc(self.tp, self.tn, self.fp, self.fn)

    def as_dict(self) -> dict:
        return {"Acc": self.acc, "MCC": self.mcc, "TPR": self.tpr, "FPR": self.fpr}


def mcc(tp: int, tn: int, fp: int, fn: int) -> float:
    """Matthews correlation coefficient; 0 when any marginal total is 0."""
    tp, tn, fp, fn = (int(v) for v in (tp, tn, fp, fn))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def confusion_counts(est, truth) -> ConfusionCounts:
    """Pooled counts over the upper-triangle edges of all groups."""
    e, t = _as_groups(est).astype(bool), _as_groups(truth).astype(bool)
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {t.shape}")
    e, t = _upper(e), _upper(t)
    return ConfusionCounts(
        tp=int(np.sum(e & t)), tn=int(np.sum(~e & ~t)), fp=int(np.sum(e & ~t)), fn=int(np.sum(~e & t))
    )


def confusion_metrics(est, truth, per_group: bool = False):
    """Accuracy, MCC, TPR and FPR of an estimated graph set.

    Parameters
    ----------
    est, truth : array_like of bool
        ``p x p`` or ``K x p x p`` adjacency matrices.
    per_group : bool
        If True, also return a list with one dict per group.

    Returns
    -------
    dict or (dict, list of dict)
    """
    pooled = confusion_counts(est, truth).as_dict()
    if not per_group:
        return pooled
    e, t = _as_groups(est), _as_groups(truth)
    return pooled, [confusion_counts(e[k], t[k]).as_dict() for k in range(e.shape[0])]


def auc(scores, truth) -> float:
    """Mann-Whitney AUC of edge scores against true edges (midranks for ties).

    Parameters
    ----------
    scores, truth : array_like
        Either matching ``p x p`` / ``K x p x p`` matrices (upper triangles
        used) or matching 1-D vectors.

    Raises
    ------
    ValueError
        If the truth has no positives or no negatives, or scores are not finite.
    """
    s, t = np.asarray(scores, dtype=float), np.asarray(truth)
    if s.ndim > 1:
        s, t = _upper(_as_groups(s)).ravel(), _upper(_as_groups(t)).ravel()
    if s.shape != t.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {t.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    t = t.astype(bool)
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when the truth is all-positive or all-negative")
    ranks = stats.rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def frobenius_loss(est, truth) -> float:
    """Mean over groups of ``||est_k - truth_k||_F``."""
    e, t = _as_groups(np.asarray(est, dtype=float)), _as_groups(np.asarray(truth, dtype=float))
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {t.shape}")
    return float(np.mean(np.linalg.norm(e - t, axis=(1, 2))))


def aafe(y_test, omega_hat, predictors, targets) -> float:
    """Average absolute forecast error of the best linear predictor.

    Targets are predicted as ``Sigma_21 Sigma_11^{-1} y_1`` with ``Sigma =
    omega_hat^{-1}``; errors are averaged over rows and target columns.

    Parameters
    ----------
    y_test : ndarray
        ``n x p`` test observations.
    omega_hat : ndarray
        ``p x p`` positive-definite precision estimate.
    predictors, targets : sequence of int
        Disjoint column indices covering ``0..p-1``.

    Raises
    ------
    ValueError
        If the partition is invalid.
    numpy.linalg.LinAlgError
        If ``Sigma_11`` is singular.
    """
    y = np.atleast_2d(np.asarray(y_test, dtype=float))
    p = y.shape[1]
    a, b = np.asarray(predictors, dtype=int), np.asarray(targets, dtype=int)
    if sorted(np.concatenate([a, b]).tolist()) != list(range(p)):
        raise ValueError("predictors and targets must partition the columns")
    sigma = np.linalg.inv(np.asarray(omega_hat, dtype=float))
    coef = np.linalg.solve(sigma[np.ix_(a, a)], sigma[np.ix_(a, b)])
    pred = y[:, a] @ coef
    return float(np.mean(np.abs(y[:, b] - pred)))


def mean_aafe(y_tests, omega_hats, predictors, targets) -> float:
    """AAFE averaged over groups."""
    return float(np.mean([aafe(y, om, predictors, targets) for y, om in zip(y_tests, omega_hats)]))


METRIC_COLUMNS = ["method", "scenario", "replicate", "Acc", "MCC", "TPR", "FPR", "AUC", "Frobenius"]


def append_metrics_csv(path, row: dict) -> None:
    """Append one metrics row, writing the header if the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow({c: row.get(c, "") for c in METRIC_COLUMNS})
