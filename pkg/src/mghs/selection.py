"""Posterior edge selection: median probability model and the cut model.

The cut model treats the shrinkage weights ``kappa = lambda^2 / (1 +
lambda^2)`` as data for a separate module with edge indicators ``z`` and a
threshold ``t`` (one per group) carrying a ``Beta(a, b)`` prior. Given the
current chain state, ``z_ij ~ Bernoulli(q_ij)`` with ``q_ij = P(kappa_ij >=
t)``; ``t`` is updated by an independence Metropolis-Hastings step whose
proposal is the prior. Nothing flows back into the chain.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .g3p import cdf_gamma1

__all__ = [
    "SelectionMode",
    "SelectionConfig",
    "CutState",
    "SelectionResult",
    "kappa_tail_prob",
    "cut_log_target",
    "cut_step",
    "select",
    "write_adjacency_csv",
    "read_adjacency_csv",
]


class SelectionMode(enum.Enum):
    MPM = "mpm"
    Cut = "cut"


@dataclass(frozen=True)
class SelectionConfig:
    """Beta prior on the threshold and the cut-model update rule.

    Attributes
    ----------
    a, b : float
        ``Beta(a, b)`` prior on ``t``.
    iterations : int
        Cut-model steps per retained chain draw.
    mode : SelectionMode
    hastings_correction : bool
        If False, accept ``t*`` with the ratio of the full cut posterior
        (prior included). If True, use the likelihood ratio only, which is
        the correct rule for a prior-drawn independence proposal.
    """

    a: float = 30.0
    b: float = 25.0
    iterations: int = 1
    mode: SelectionMode = SelectionMode.Cut
    hastings_correction: bool = False

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta hyperparameters must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not isinstance(self.mode, SelectionMode):
            object.__setattr__(self, "mode", SelectionMode(self.mode))


@dataclass
class CutState:
    """Running state of the cut module for one chain."""

    t: np.ndarray
    z: np.ndarray
    z_sum: np.ndarray
    steps: int = 0
    accepted: int = 0
    proposed: int = 0
    t_draws: list = field(default_factory=list)

    @classmethod
    def initial(cls, K: int, n_edges: int, config: SelectionConfig) -> "CutState":
        """Start every threshold at the prior mean with no edges included."""
        t0 = np.full(K, config.a / (config.a + config.b))
        return cls(t=t0, z=np.zeros((K, n_edges), dtype=np.int8), z_sum=np.zeros((K, n_edges)))

    @property
    def z_frequency(self) -> np.ndarray:
        return self.z_sum / self.steps if self.steps else np.zeros_like(self.z_sum)

    @property
    def accept_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


@dataclass
class SelectionResult:
    """Selected graphs.

    Attributes
    ----------
    mode : SelectionMode
    adjacency : ndarray of bool
        ``K x p x p``, symmetric with zero diagonal.
    z_frequency : ndarray
        ``K x p x p`` per-edge score used for the decision (mean ``kappa``
        under MPM, inclusion frequency under Cut).
    t_alpha_draws : ndarray
        ``T x K`` threshold draws (empty under MPM).
    """

    mode: SelectionMode
    adjacency: np.ndarray
    z_frequency: np.ndarray
    t_alpha_draws: np.ndarray


def kappa_tail_prob(alpha_lambda, beta_lambda, t):
    """``P(kappa >= t)`` under the full conditional of one local scale.

    With ``u = sqrt((1 - kappa) / kappa) = 1 / lambda``, ``u`` is
    G3p(1, sqrt(alpha_lambda), beta_lambda), so the tail probability is the
    G3p(1) CDF at ``sqrt((1 - t) / t)``.

    Parameters
    ----------
    alpha_lambda : float or array_like
        Positive coefficient (before the square root).
    beta_lambda : float or array_like
    t : float or array_like
        Threshold in ``[0, 1]``.

    Returns
    -------
    float or ndarray
    """
    a = np.sqrt(np.asarray(alpha_lambda, dtype=float))
    b = np.asarray(beta_lambda, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    # t = 0 or subnormal t maps to x = inf, where the CDF is 1
    with np.errstate(divide="ignore", over="ignore"):
        x = np.sqrt((1.0 - t) / t)
    a, b, x = np.broadcast_arrays(a, b, x)
    out = np.asarray(cdf_gamma1(a, b, x), dtype=float)
    return float(out) if out.ndim == 0 else out


def cut_log_target(z, q, t, config: SelectionConfig, include_prior: bool = True) -> float:
    """Log of the cut-module density of ``(z, t)`` given the current ``q(t)``."""
    z = np.asarray(z, dtype=float)
    ll = float(np.sum(special.xlogy(z, q) + special.xlogy(1.0 - z, 1.0 - q)))
    if include_prior:
        ll += (config.a - 1.0) * math.log(t) + (config.b - 1.0) * math.log1p(-t)
    return ll


def cut_step(alpha_lambda: np.ndarray, beta_lambda: np.ndarray, state: CutState,
             config: SelectionConfig, rng: np.random.Generator) -> CutState:
    """One cut-model update of ``z`` and ``t`` for every group.

    Parameters
    ----------
    alpha_lambda, beta_lambda : ndarray
        ``K x E`` full-conditional coefficients of the local scales.
    state : CutState
        Updated in place and returned.
    config : SelectionConfig
    rng : numpy.random.Generator
        Dedicated stream; the chain's stream is never touched.
    """
    alpha_lambda = np.atleast_2d(alpha_lambda)
    beta_lambda = np.atleast_2d(beta_lambda)
    K = alpha_lambda.shape[0]
    use_prior = not config.hastings_correction
    for _ in range(config.iterations):
        for k in range(K):
            q = kappa_tail_prob(alpha_lambda[k], beta_lambda[k], state.t[k])
            z = (rng.random(q.shape) < q).astype(np.int8)
            state.z[k] = z
            t_new = rng.beta(config.a, config.b)
            q_new = kappa_tail_prob(alpha_lambda[k], beta_lambda[k], t_new)
            log_acc = (cut_log_target(z, q_new, t_new, config, use_prior)
                       - cut_log_target(z, q, state.t[k], config, use_prior))
            state.proposed += 1
            if math.log(rng.random()) < min(0.0, log_acc):
                state.t[k] = t_new
                state.accepted += 1
        state.z_sum += state.z
        state.steps += 1
        state.t_draws.append(state.t.copy())
    return state


def _to_matrix(values: np.ndarray, p: int) -> np.ndarray:
    iu, ju = np.triu_indices(p, 1)
    out = np.zeros((values.shape[0], p, p))
    out[:, iu, ju] = values
    out[:, ju, iu] = values
    return out


def select(traces, mode: SelectionMode = SelectionMode.MPM) -> SelectionResult:
    """Decide edges from one chain or pooled chains.

    Parameters
    ----------
    traces : ChainTrace or sequence of ChainTrace
        Multiple chains are pooled by averaging their per-edge scores.
    mode : SelectionMode
        ``MPM`` includes edges with mean ``kappa >= 1/2``; ``Cut`` includes
        edges whose inclusion frequency is ``>= 1/2`` (requires traces run
        with a cut-mode selection config).
    """
    if not isinstance(traces, (list, tuple)):
        traces = [traces]
    mode = SelectionMode(mode)
    p = traces[0].p
    if mode is SelectionMode.MPM:
        score = np.mean([tr.kappa_mean for tr in traces], axis=0)
        t_draws = np.empty((0, traces[0].K))
    else:
        if any(tr.selection is None for tr in traces):
            raise ValueError("Cut selection needs traces produced with a cut-mode selection config")
        score = _to_matrix(np.mean([tr.selection.z_frequency for tr in traces], axis=0), p)
        t_draws = np.concatenate([np.asarray(tr.selection.t_draws).reshape(-1, traces[0].K) for tr in traces])
    adj = score >= 0.5
    for k in range(adj.shape[0]):
        np.fill_diagonal(adj[k], False)
    return SelectionResult(mode=mode, adjacency=adj, z_frequency=score, t_alpha_draws=t_draws)


def write_adjacency_csv(path, result: SelectionResult) -> None:
    """Upper-triangle edge list with 1-based ``i, j, group``."""
    K, p, _ = result.adjacency.shape
    iu, ju = np.triu_indices(p, 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "group", "included", "frequency"])
        for k in range(K):
            for i, j in zip(iu, ju):
                w.writerow([i + 1, j + 1, k + 1, int(result.adjacency[k, i, j]),
                            repr(float(result.z_frequency[k, i, j]))])


def read_adjacency_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_adjacency_csv`: ``(adjacency, frequency)``."""
    rows = list(csv.DictReader(open(Path(path), newline="")))
    if not rows:
        raise ValueError(f"{path}: empty adjacency file")
    K = max(int(r["group"]) for r in rows)
    p = max(int(r["j"]) for r in rows)
    adj = np.zeros((K, p, p), dtype=bool)
    freq = np.zeros((K, p, p))
    for r in rows:
        i, j, k = int(r["i"]) - 1, int(r["j"]) - 1, int(r["group"]) - 1
        adj[k, i, j] = adj[k, j, i] = bool(int(r["included"]))
        freq[k, i, j] = freq[k, j, i] = float(r["frequency"])
    return adj, freq
