"""Metropolis-within-Gibbs sampler for the multiple graphical horseshoe.

Each group ``k`` has a precision matrix ``Omega_k`` whose off-diagonal
entries follow, jointly across groups, ``omega_ij ~ N_K(0, Delta_ij R
Delta_ij)`` with ``Delta_ij = diag(tau_k lambda_ij,k)``. Local and global
scales carry half-Cauchy priors written through inverse-Gamma auxiliaries
(``eta``, ``zeta``). One sweep updates, for every group and column, the
column of ``Omega_k`` and its local scales; then the global scales; then
the group correlation matrix ``R`` by a parameter-expanded
Metropolis-Hastings step.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from . import g3p
from .g3p import _sample_gamma1_kernel  # compiled local-scale sampler

__all__ = [
    "GroupData",
    "ChainState",
    "ChainConfig",
    "ChainTrace",
    "SweepError",
    "init_state",
    "conditional_coefficients",
    "update_omega_column",
    "update_shrinkage_column",
    "update_global_shrinkage",
    "update_R",
    "expansion_terms",
    "log_r_acceptance",
    "log_likelihood",
    "global_coefficients",
    "sweep",
    "run_chain",
    "log_joint_posterior",
    "kappa_coefficients",
    "psrf",
    "chain_rngs",
    "check_state",
    "write_trace_csv",
    "read_trace_csv",
    "summary_dict",
    "write_summary_json",
    "trace_from_files",
]


class SweepError(RuntimeError):
    """Raised when a numerical failure stops the chain."""


@dataclass
class GroupData:
    """Observations and scatter matrices for ``K`` groups on ``p`` variables.

    Attributes
    ----------
    Y : list of ndarray
        ``n_k x p`` observation matrices.
    S : ndarray
        ``K x p x p`` scatter matrices ``Y_k^T Y_k``.
    n : ndarray
        Group sizes.
    """

    Y: list
    S: np.ndarray
    n: np.ndarray

    @classmethod
    def from_observations(cls, Ys) -> "GroupData":
        Ys = [np.asarray(y, dtype=float) for y in Ys]
        if not Ys:
            raise ValueError("at least one group is required")
        p = Ys[0].shape[1]
        for k, y in enumerate(Ys):
            if y.ndim != 2 or y.shape[1] != p:
                raise ValueError(f"group {k + 1} has shape {y.shape}, expected (n, {p})")
            if not np.all(np.isfinite(y)):
                raise ValueError(f"group {k + 1} contains non-finite values")
        S = np.stack([y.T @ y for y in Ys])
        n = np.array([y.shape[0] for y in Ys], dtype=float)
        return cls(Ys, S, n)

    @property
    def K(self) -> int:
        return self.S.shape[0]

    @property
    def p(self) -> int:
        return self.S.shape[1]


@dataclass
class ChainState:
    """Full state of one chain. Shrinkage quantities are stored as variances.

    ``coef[k]`` holds ``R_{-k}^{-1} r_k`` scattered into a length-``K``
    vector with a zero at position ``k``; ``mu[k] = 1 - r_k^T R_{-k}^{-1}
    r_k``. Both are refreshed whenever ``R`` changes.
    """

    omega: np.ndarray
    sigma: np.ndarray
    lam2: np.ndarray
    eta: np.ndarray
    tau2: np.ndarray
    zeta: np.ndarray
    R: np.ndarray
    mu: np.ndarray
    coef: np.ndarray

    @property
    def K(self) -> int:
        return self.omega.shape[0]

    @property
    def p(self) -> int:
        return self.omega.shape[1]

    def copy(self) -> "ChainState":
        return ChainState(*(getattr(self, f).copy() for f in self.__dataclass_fields__))


@dataclass
class ChainConfig:
    """Run-length, seeding and model switches for :func:`run_chain`."""

    burnin: int = 5000
    iterations: int = 10000
    thin: int = 1
    seed: int = 0
    chain_id: int = 0
    freeze_R_identity: bool = False
    store_draws: bool = True
    g3p_tables: object = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burnin < 0:
            raise ValueError("burnin must be >= 0")


@dataclass
class ChainTrace:
    """Thinned draws and post-burnin posterior means of one chain.

    Edge-indexed arrays use the upper-triangle order of
    ``numpy.triu_indices(p, 1)``.
    """

    K: int
    p: int
    kappa_draws: np.ndarray | None
    omega_draws: np.ndarray | None
    tau2_draws: np.ndarray
    R_draws: np.ndarray
    logpost: np.ndarray
    omega_mean: np.ndarray
    sigma_mean: np.ndarray
    kappa_mean: np.ndarray
    R_mean: np.ndarray
    R_accepted: int
    R_proposed: int
    seconds: float
    g3p_counts: dict = field(default_factory=dict)
    selection: object = None

    @property
    def R_accept_rate(self) -> float:
        return self.R_accepted / self.R_proposed if self.R_proposed else float("nan")


# ---------------------------------------------------------------------------
# State helpers
# ---------------------------------------------------------------------------

def conditional_coefficients(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(coef, mu)`` for the conditional of group ``k`` given the rest.

    ``coef[k, l] = (R_{-k}^{-1} r_k)_l`` for ``l != k`` and ``mu[k] = 1 -
    r_k^T R_{-k}^{-1} r_k``.
    """
    K = R.shape[0]
    coef = np.zeros((K, K))
    mu = np.ones(K)
    for k in range(K):
        rest = [l for l in range(K) if l != k]
        if not rest:
            continue
        r_k = R[rest, k]
        c = np.linalg.solve(R[np.ix_(rest, rest)], r_k)
        coef[k, rest] = c
        mu[k] = 1.0 - r_k @ c
    return coef, mu


def init_state(K: int, p: int) -> ChainState:
    """Identity precision/covariance, unit scales, ``R = I`` and ``mu = 1``."""
    if K < 1 or p < 2:
        raise ValueError("need K >= 1 and p >= 2")
    eye = np.broadcast_to(np.eye(p), (K, p, p)).copy()
    ones = np.ones((K, p, p))
    R = np.eye(K)
    coef, mu = conditional_coefficients(R)
    return ChainState(
        omega=eye.copy(),
        sigma=eye.copy(),
        lam2=ones.copy(),
        eta=ones.copy(),
        tau2=np.ones(K),
        zeta=np.ones(K),
        R=R,
        mu=mu,
        coef=coef,
    )


def check_state(state: ChainState, tol: float = 1e-6) -> None:
    """Raise ``AssertionError`` if a state invariant is violated."""
    K, p = state.K, state.p
    eye = np.eye(p)
    for k in range(K):
        om = state.omega[k]
        assert np.array_equal(om, om.T), f"Omega_{k + 1} not symmetric"
        np.linalg.cholesky(om)
        err = np.max(np.abs(om @ state.sigma[k] - eye))
        assert err <= tol, f"Omega_{k + 1} Sigma_{k + 1} deviates from I by {err:.3g}"
    np.linalg.cholesky(state.R)
    assert np.allclose(np.diag(state.R), 1.0)
    assert np.all((state.mu > 0) & (state.mu <= 1.0 + 1e-12))
    off = ~np.eye(p, dtype=bool)
    assert np.all(state.lam2[:, off] > 0) and np.all(state.eta[:, off] > 0)
    assert np.all(state.tau2 > 0) and np.all(state.zeta > 0)


def chain_rngs(seed: int, chain_id: int = 0) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent main-chain and selection streams for ``(seed, chain_id)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain_id),))
    main, sel = ss.spawn(2)
    return np.random.default_rng(main), np.random.default_rng(sel)


# ---------------------------------------------------------------------------
# Compiled column kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cholesky_inplace(a):
    """Lower Cholesky factor in the lower triangle of ``a``; False if not PD."""
    n = a.shape[0]
    for j in range(n):
        s = a[j, j]
        for m in range(j):
            s -= a[j, m] * a[j, m]
        if not (s > 0.0):
            return False
        d = math.sqrt(s)
        a[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for m in range(j):
                s -= a[i, m] * a[j, m]
            a[i, j] = s / d
    return True


@njit(cache=True)
def _edge_conditional(k, i, j, omega, lam2, tau2, coef):
    """``t = sum_{l != k} coef[k, l] omega^l_ij / delta^l_ij``."""
    t = 0.0
    for l in range(omega.shape[0]):
        if l != k and coef[k, l] != 0.0:
            t += coef[k, l] * omega[l, i, j] / math.sqrt(tau2[l] * lam2[l, i, j])
    return t


@njit(cache=True)
def _omega_column(k, j, omega, sigma, lam2, tau2, mu, coef, S, n, rng, work_t):
    """Gibbs update of column ``j`` of ``Omega_k`` and rank-one update of ``Sigma_k``.

    Returns 0 on success, 1 if the Normal precision needed jitter, and 2 if
    it stayed non-PD after jitter. ``work_t`` receives the conditional
    means ``t_i`` used again by the shrinkage update.
    """
    p = omega.shape[1]
    q = p - 1
    idx = np.empty(q, dtype=np.int64)
    c = 0
    for i in range(p):
        if i != j:
            idx[c] = i
            c += 1
    sjj = S[k, j, j]
    sig_jj = sigma[k, j, j]
    # O = Sigma_{-j} - sigma_j sigma_j^T / sigma_jj  (inverse of Omega_{-j})
    O = np.empty((q, q))
    for a in range(q):
        ia = idx[a]
        sa = sigma[k, ia, j]
        for b in range(a, q):
            ib = idx[b]
            val = sigma[k, ia, ib] - sa * sigma[k, ib, j] / sig_jj
            O[a, b] = val
            O[b, a] = val
    dinv = np.empty(q)
    rhs = np.empty(q)
    for a in range(q):
        i = idx[a]
        d2 = tau2[k] * lam2[k, i, j]
        t = _edge_conditional(k, i, j, omega, lam2, tau2, coef)
        work_t[a] = t
        dinv[a] = 1.0 / (d2 * mu[k])
        rhs[a] = dinv[a] * math.sqrt(d2) * t - S[k, i, j]
    W = np.empty((q, q))
    for a in range(q):
        for b in range(q):
            W[a, b] = sjj * O[a, b]
        W[a, a] += dinv[a]
    status = 0
    L = W.copy()
    if not _cholesky_inplace(L):
        status = 1
        L = W.copy()
        for a in range(q):
            L[a, a] += 1e-10
        if not _cholesky_inplace(L):
            return 2
    # mean = W^{-1} rhs; v = mean + L^{-T} z
    y = np.empty(q)
    for a in range(q):
        s = rhs[a]
        for b in range(a):
            s -= L[a, b] * y[b]
        y[a] = s / L[a, a]
    v = np.empty(q)
    for a in range(q):
        y[a] = y[a] + rng.standard_normal()
    for a in range(q - 1, -1, -1):
        s = y[a]
        for b in range(a + 1, q):
            s -= L[b, a] * v[b]
        v[a] = s / L[a, a]
    gam = rng.gamma(n[k] / 2.0 + 1.0, 2.0 / sjj)
    Ov = O @ v
    vOv = 0.0
    for a in range(q):
        vOv += v[a] * Ov[a]
    for a in range(q):
        i = idx[a]
        omega[k, i, j] = v[a]
        omega[k, j, i] = v[a]
    omega[k, j, j] = gam + vOv
    # Sigma_{-j} = O + Ov Ov^T / gam; sigma_j = -Ov / gam; sigma_jj = 1 / gam
    for a in range(q):
        ia = idx[a]
        for b in range(a, q):
            ib = idx[b]
            val = O[a, b] + Ov[a] * Ov[b] / gam
            sigma[k, ia, ib] = val
            sigma[k, ib, ia] = val
        sigma[k, ia, j] = -Ov[a] / gam
        sigma[k, j, ia] = -Ov[a] / gam
    sigma[k, j, j] = 1.0 / gam
    return status


@njit(cache=True)
def _shrinkage_column(k, j, omega, lam2, eta, tau2, mu, coef, rng, work_t, counts):
    """Local-scale update for column ``j`` of group ``k`` (uses ``work_t``)."""
    p = omega.shape[1]
    q = p - 1
    alpha = np.empty(q)
    beta = np.empty(q)
    c = 0
    tau = math.sqrt(tau2[k])
    for i in range(p):
        if i == j:
            continue
        w = omega[k, i, j]
        alpha[c] = math.sqrt(1.0 / eta[k, i, j] + w * w / (2.0 * tau2[k] * mu[k]))
        beta[c] = w * work_t[c] / (tau * mu[k])
        c += 1
    u = np.empty(q)
    _sample_gamma1_kernel(alpha, beta, rng, counts, u)
    for c in range(q):
        if not (u[c] > 0.0):
            return 1
    c = 0
    for i in range(p):
        if i == j:
            continue
        l2 = 1.0 / (u[c] * u[c])
        e = (1.0 + 1.0 / l2) / rng.exponential()
        lam2[k, i, j] = l2
        lam2[k, j, i] = l2
        eta[k, i, j] = e
        eta[k, j, i] = e
        c += 1
    return 0


@njit(cache=True)
def _group_columns(k, omega, sigma, lam2, eta, tau2, mu, coef, S, n, rng, counts):
    """All column updates of group ``k``; returns ``(status, column)``."""
    p = omega.shape[1]
    work_t = np.empty(p - 1)
    jitter = 0
    for j in range(p):
        st = _omega_column(k, j, omega, sigma, lam2, tau2, mu, coef, S, n, rng, work_t)
        if st == 2:
            return 2, j
        if st == 1:
            jitter += 1
        if _shrinkage_column(k, j, omega, lam2, eta, tau2, mu, coef, rng, work_t, counts) != 0:
            return 3, j
    return (1 if jitter else 0), -1


# ---------------------------------------------------------------------------
# Update steps
# ---------------------------------------------------------------------------

def _counts(stats: g3p.SamplerStats | None) -> np.ndarray:
    return stats.counts if stats is not None else np.zeros(len(g3p.SamplerStats.FIELDS), dtype=np.int64)


def update_omega_column(state: ChainState, data: GroupData, k: int, j: int, rng: np.random.Generator) -> np.ndarray:
    """Gibbs update of column ``j`` of ``Omega_k``; returns the conditional means ``t``.

    Raises
    ------
    SweepError
        If the Normal precision stays non-PD after adding ``1e-10 I``.
    """
    t = np.empty(state.p - 1)
    st = _omega_column(k, j, state.omega, state.sigma, state.lam2, state.tau2, state.mu,
                       state.coef, data.S, data.n, rng, t)
    if st == 2:
        raise SweepError(f"non-PD column precision (group {k + 1}, column {j + 1})")
    return t


def update_shrinkage_column(state: ChainState, k: int, j: int, rng: np.random.Generator,
                            stats: g3p.SamplerStats | None = None) -> None:
    """Draw ``lambda^2_ij,k`` and ``eta_ij,k`` for every ``i != j``."""
    t = np.array([
        _edge_conditional(k, i, j, state.omega, state.lam2, state.tau2, state.coef)
        for i in range(state.p) if i != j
    ])
    if _shrinkage_column(k, j, state.omega, state.lam2, state.eta, state.tau2, state.mu, state.coef,
                         rng, t, _counts(stats)) != 0:
        raise SweepError(f"local-scale draw failed (group {k + 1}, column {j + 1})")


def _edge_arrays(state: ChainState):
    iu, ju = np.triu_indices(state.p, 1)
    w = state.omega[:, iu, ju]
    l2 = state.lam2[:, iu, ju]
    delta = np.sqrt(state.tau2[:, None] * l2)
    return w, l2, delta


def global_coefficients(state: ChainState) -> tuple[np.ndarray, np.ndarray]:
    """``(alpha_tau, beta_tau)`` per group, before the square root on alpha."""
    w, l2, delta = _edge_arrays(state)
    x = w / delta
    t = state.coef @ x  # t[k, e] = sum_l coef[k, l] omega^l_e / delta^l_e
    alpha = 1.0 / state.zeta + 0.5 * np.sum(w * w / l2, axis=1) / state.mu
    beta = np.sum(w / np.sqrt(l2) * t, axis=1) / state.mu
    return alpha, beta


def update_global_shrinkage(state: ChainState, rng: np.random.Generator,
                            stats: g3p.SamplerStats | None = None, tables=None) -> None:
    """Draw ``tau^2_k`` from ``1 / G3p(p(p-1)/2, sqrt(alpha_tau), beta_tau)^2`` and ``zeta_k``."""
    order = state.p * (state.p - 1) // 2
    for k in range(state.K):
        alpha, beta = global_coefficients(state)
        params = g3p.G3pParams(order, math.sqrt(alpha[k]), float(beta[k]))
        u = g3p.sample(params, rng, stats=stats, tables=tables)
        state.tau2[k] = 1.0 / (u * u)
        state.zeta[k] = (1.0 + 1.0 / state.tau2[k]) / rng.exponential()


# Smallest accepted conditional variance 1 - r_k' R_{-k}^{-1} r_k; proposals
# closer to singular are treated as outside the support.
R_MIN_CONDITIONAL_VARIANCE = 1e-10


def _logdet_pd(a: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(a)))))


def expansion_terms(state: ChainState) -> tuple[np.ndarray, np.ndarray]:
    """Scale matrix ``H`` and the normalized edges ``eps`` of the R-step.

    ``eps = V^{-1} omega`` with ``V_kk = sqrt(sum_{i<j} (omega^k_ij)^2)``, so
    each row of ``eps`` has unit norm, and ``H = sum_{i<j} Delta_ij^{-1}
    eps_ij eps_ij^T Delta_ij^{-1}``.
    """
    w, _, delta = _edge_arrays(state)
    norms = np.sqrt(np.sum(w * w, axis=1))
    eps = w / norms[:, None]
    x = eps / delta
    return x @ x.T, eps


def log_r_acceptance(R_new: np.ndarray, R_old: np.ndarray) -> float:
    """``(K + 1) / 2 * (log|R_new| - log|R_old|)``."""
    K = R_old.shape[0]
    return 0.5 * (K + 1) * (_logdet_pd(R_new) - _logdet_pd(R_old))


def update_R(state: ChainState, rng: np.random.Generator, freeze: bool = False) -> bool:
    """Parameter-expanded Metropolis-Hastings step for ``R``.

    Proposes ``Psi ~ InvWishart(p(p-1)/2, H)``, rescales it to a
    correlation matrix and accepts with probability ``min(1, exp((K + 1)
    / 2 (log|R*| - log|R|)))``. A proposal that is not numerically
    positive definite has zero density and is rejected. No-op when ``K <
    2`` or ``freeze``.

    Returns
    -------
    bool
        Whether the proposal was accepted.
    """
    K = state.K
    if K < 2 or freeze:
        return False
    df = state.p * (state.p - 1) // 2
    H, _ = expansion_terms(state)
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        H = H + 1e-10 * np.eye(K)
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise SweepError("expansion scale matrix H is not positive definite") from exc
    psi = np.atleast_2d(stats.invwishart.rvs(df=df, scale=H, random_state=rng))
    d = 1.0 / np.sqrt(np.diag(psi))
    R_new = psi * d[:, None] * d[None, :]
    R_new = 0.5 * (R_new + R_new.T)
    np.fill_diagonal(R_new, 1.0)
    log_u = math.log(rng.random())
    try:
        log_acc = log_r_acceptance(R_new, state.R)
    except np.linalg.LinAlgError:
        # numerically singular R* lies outside the support: reject
        return False
    if log_u < min(0.0, log_acc):
        coef, mu = conditional_coefficients(R_new)
        if not (np.all(np.isfinite(coef)) and np.all(mu >= R_MIN_CONDITIONAL_VARIANCE)):
            return False
        state.R = R_new
        state.coef, state.mu = coef, mu
        return True
    return False


def sweep(state: ChainState, data: GroupData, rng: np.random.Generator, freeze_R: bool = False,
          stats: g3p.SamplerStats | None = None, tables=None) -> bool:
    """One full iteration: columns of every group, global scales, then ``R``.

    Returns
    -------
    bool
        Whether the ``R`` proposal was accepted.
    """
    counts = _counts(stats)
    for k in range(state.K):
        status, col = _group_columns(k, state.omega, state.sigma, state.lam2, state.eta, state.tau2,
                                     state.mu, state.coef, data.S, data.n, rng, counts)
        if status == 2:
            raise SweepError(f"non-PD column precision after jitter (group {k + 1}, column {col + 1})")
        if status == 3:
            raise SweepError(f"local-scale draw failed (group {k + 1}, column {col + 1})")
    update_global_shrinkage(state, rng, stats=stats, tables=tables)
    return update_R(state, rng, freeze=freeze_R)


# ---------------------------------------------------------------------------
# Posterior evaluation
# ---------------------------------------------------------------------------

def _log_invgamma(x, a, b):
    return a * np.log(b) - math.lgamma(a) - (a + 1.0) * np.log(x) - b / x


def log_likelihood(state: ChainState, data: GroupData) -> float:
    """``sum_k n_k / 2 log|Omega_k| - tr(S_k Omega_k) / 2``; ``-inf`` if any ``Omega_k`` is not PD."""
    total = 0.0
    for k in range(state.K):
        try:
            chol = np.linalg.cholesky(state.omega[k])
        except np.linalg.LinAlgError:
            return -math.inf
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        total += 0.5 * data.n[k] * logdet - 0.5 * np.sum(data.S[k] * state.omega[k])
    return float(total)


def log_joint_posterior(state: ChainState, data: GroupData) -> float:
    """Unnormalized log joint posterior of the full state.

    Gaussian likelihood, ``N_K(0, Delta R Delta)`` edge prior, and the
    inverse-Gamma forms of the half-Cauchy priors on ``lambda`` and ``tau``
    (with their auxiliaries). Returns ``-inf`` if any ``Omega_k`` is not PD.
    """
    total = log_likelihood(state, data)
    if not math.isfinite(total):
        return total
    K = state.K
    w, l2, delta = _edge_arrays(state)
    x = w / delta
    r_inv = np.linalg.inv(state.R)
    quad = np.sum(x * (r_inv @ x))
    n_edges = w.shape[1]
    total += (-0.5 * K * n_edges * math.log(2.0 * math.pi) - np.sum(np.log(delta))
              - 0.5 * n_edges * _logdet_pd(state.R) - 0.5 * quad)
    iu, ju = np.triu_indices(state.p, 1)
    eta = state.eta[:, iu, ju]
    total += np.sum(_log_invgamma(l2, 0.5, 1.0 / eta)) + np.sum(_log_invgamma(eta, 0.5, 1.0))
    total += np.sum(_log_invgamma(state.tau2, 0.5, 1.0 / state.zeta)) + np.sum(_log_invgamma(state.zeta, 0.5, 1.0))
    return float(total)


def kappa_coefficients(state: ChainState) -> tuple[np.ndarray, np.ndarray]:
    """Full-conditional ``(alpha_lambda, beta_lambda)`` for every edge and group.

    Shapes ``(K, p(p-1)/2)`` in upper-triangle order. ``alpha_lambda`` is
    the coefficient before the square root, so the reciprocal local scale
    ``1 / lambda`` is G3p(1, sqrt(alpha_lambda), beta_lambda).
    """
    w, l2, delta = _edge_arrays(state)
    iu, ju = np.triu_indices(state.p, 1)
    eta = state.eta[:, iu, ju]
    t = state.coef @ (w / delta)
    tau2 = state.tau2[:, None]
    mu = state.mu[:, None]
    alpha = 1.0 / eta + w * w / (2.0 * tau2 * mu)
    beta = w * t / (np.sqrt(tau2) * mu)
    return alpha, beta


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

def run_chain(data: GroupData, config: ChainConfig, selection_config=None,
              state: ChainState | None = None, progress=None) -> ChainTrace:
    """Run ``burnin + iterations`` sweeps and collect draws after burn-in.

    Parameters
    ----------
    data : GroupData
    config : ChainConfig
    selection_config : selection.SelectionConfig, optional
        When given with ``mode = Cut``, one cut-model step runs per thinned
        draw on an independent random stream; the chain itself is unaffected.
    state : ChainState, optional
        Starting state (default :func:`init_state`).
    progress : callable, optional
        Called as ``progress(iteration, total)`` every 100 sweeps.

    Returns
    -------
    ChainTrace
    """
    from . import selection as sel_mod

    K, p = data.K, data.p
    rng, sel_rng = chain_rngs(config.seed, config.chain_id)
    st = init_state(K, p) if state is None else state
    freeze = config.freeze_R_identity or K < 2
    n_keep = config.iterations // config.thin
    P = p * (p - 1) // 2
    iu, ju = np.triu_indices(p, 1)
    kappa_draws = np.empty((n_keep, K, P)) if config.store_draws else None
    omega_draws = np.empty((n_keep, K, P)) if config.store_draws else None
    tau2_draws = np.empty((n_keep, K))
    R_draws = np.empty((n_keep, K, K))
    logpost = np.empty(n_keep)
    omega_sum = np.zeros((K, p, p))
    sigma_sum = np.zeros((K, p, p))
    kappa_sum = np.zeros((K, p, p))
    R_sum = np.zeros((K, K))
    accepted = 0
    proposed = 0
    gstats = g3p.SamplerStats()
    sel_state = None
    cut = selection_config is not None and selection_config.mode is sel_mod.SelectionMode.Cut
    if cut:
        sel_state = sel_mod.CutState.initial(K, P, selection_config)
    total = config.burnin + config.iterations
    t0 = time.perf_counter()
    keep = 0
    for it in range(total):
        try:
            acc = sweep(st, data, rng, freeze_R=freeze, stats=gstats, tables=config.g3p_tables)
        except SweepError as exc:
            raise SweepError(f"iteration {it + 1}: {exc}") from exc
        if not freeze:
            proposed += 1
            accepted += int(acc)
        if progress is not None and (it + 1) % 100 == 0:
            progress(it + 1, total)
        if it < config.burnin:
            continue
        kappa = st.lam2 / (1.0 + st.lam2)
        omega_sum += st.omega
        sigma_sum += st.sigma
        kappa_sum += kappa
        R_sum += st.R
        if (it - config.burnin + 1) % config.thin == 0 and keep < n_keep:
            if config.store_draws:
                kappa_draws[keep] = kappa[:, iu, ju]
                omega_draws[keep] = st.omega[:, iu, ju]
            tau2_draws[keep] = st.tau2
            R_draws[keep] = st.R
            logpost[keep] = log_joint_posterior(st, data)
            if cut:
                a_l, b_l = kappa_coefficients(st)
                sel_mod.cut_step(a_l, b_l, sel_state, selection_config, sel_rng)
            keep += 1
    seconds = time.perf_counter() - t0
    m = float(config.iterations)
    kappa_mean = kappa_sum / m
    for k in range(K):
        np.fill_diagonal(kappa_mean[k], 0.0)
    return ChainTrace(
        K=K,
        p=p,
        kappa_draws=kappa_draws,
        omega_draws=omega_draws,
        tau2_draws=tau2_draws,
        R_draws=R_draws,
        logpost=logpost,
        omega_mean=omega_sum / m,
        sigma_mean=sigma_sum / m,
        kappa_mean=kappa_mean,
        R_mean=R_sum / m,
        R_accepted=accepted,
        R_proposed=proposed,
        seconds=seconds,
        g3p_counts=gstats.as_dict(),
        selection=sel_state,
    )


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def psrf(traces) -> np.ndarray:
    """Gelman-Rubin potential scale reduction factor.

    Parameters
    ----------
    traces : array_like
        Shape ``(M, T)`` for one scalar or ``(M, T, ...)`` for many; ``M >=
        2`` chains of ``T >= 10`` draws.

    Returns
    -------
    float or ndarray
        ``sqrt(V / W)`` with ``V = (T - 1) / T * W + B / T``; 1 where the
        within-chain variance is zero.
    """
    x = np.asarray(traces, dtype=float)
    if x.ndim < 2:
        raise ValueError("traces must have shape (M, T, ...)")
    M, T = x.shape[:2]
    if M < 2 or T < 10:
        raise ValueError("psrf needs at least 2 chains of 10 draws")
    chain_means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = T * chain_means.var(axis=0, ddof=1)
    V = (T - 1) / T * W + B / T
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(V / W)
    out = np.where(W > 0, out, 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------

def _scalar_columns(K: int) -> list[str]:
    cols = ["draw", "logpost"] + [f"tau2_{k + 1}" for k in range(K)]
    cols += [f"R_{a + 1}_{b + 1}" for a in range(K) for b in range(a + 1, K)]
    return cols


def write_trace_csv(path, trace: ChainTrace) -> None:
    """One row per thinned draw: ``draw, logpost, tau2_k..., R_a_b...`` (a < b).

    Floats are written with ``repr`` so reading back is exact.
    """
    K = trace.K
    ia, ib = np.triu_indices(K, 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_scalar_columns(K))
        for d in range(trace.logpost.size):
            row = [d + 1, repr(float(trace.logpost[d]))]
            row += [repr(float(v)) for v in trace.tau2_draws[d]]
            row += [repr(float(v)) for v in trace.R_draws[d][ia, ib]]
            w.writerow(row)


def read_trace_csv(path) -> dict:
    """Read :func:`write_trace_csv` output into ``logpost``, ``tau2`` and ``R`` arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    K = sum(c.startswith("tau2_") for c in header)
    if header != _scalar_columns(K):
        raise ValueError(f"{path}: unexpected trace header {header}")
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    T = data.shape[0]
    R = np.broadcast_to(np.eye(K), (T, K, K)).copy()
    ia, ib = np.triu_indices(K, 1)
    R[:, ia, ib] = data[:, 2 + K:]
    R[:, ib, ia] = data[:, 2 + K:]
    return {"logpost": data[:, 1], "tau2": data[:, 2:2 + K], "R": R}


def summary_dict(trace: ChainTrace, include_timing: bool = True) -> dict:
    """JSON-ready posterior means, acceptance rates and (optionally) timing."""
    out = {
        "K": trace.K,
        "p": trace.p,
        "draws": int(trace.logpost.size),
        "omega_mean": trace.omega_mean.tolist(),
        "sigma_mean": trace.sigma_mean.tolist(),
        "kappa_mean": trace.kappa_mean.tolist(),
        "R_mean": trace.R_mean.tolist(),
        "R_accepted": trace.R_accepted,
        "R_proposed": trace.R_proposed,
        "g3p_counts": dict(trace.g3p_counts),
    }
    if trace.selection is not None:
        sel = trace.selection
        out["cut"] = {
            "z_frequency": sel.z_frequency.tolist(),
            "t_draws": np.asarray(sel.t_draws).tolist(),
            "accepted": sel.accepted,
            "proposed": sel.proposed,
            "steps": sel.steps,
        }
    if include_timing:
        out["seconds"] = trace.seconds
    return out


def write_summary_json(path, trace: ChainTrace, include_timing: bool = True) -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(trace, include_timing), fh, indent=1)


def trace_from_files(summary_path, trace_csv_path=None) -> ChainTrace:
    """Rebuild a :class:`ChainTrace` (without stored edge draws) from its dumps."""
    from .selection import CutState

    with open(summary_path) as fh:
        s = json.load(fh)
    K, p = s["K"], s["p"]
    if trace_csv_path is not None:
        sc = read_trace_csv(trace_csv_path)
    else:
        sc = {"logpost": np.empty(0), "tau2": np.empty((0, K)), "R": np.empty((0, K, K))}
    sel = None
    if "cut" in s:
        c = s["cut"]
        zf = np.asarray(c["z_frequency"], dtype=float)
        sel = CutState(t=np.full(K, np.nan), z=np.zeros(zf.shape, dtype=np.int8),
                       z_sum=zf * c["steps"], steps=c["steps"], accepted=c["accepted"],
                       proposed=c["proposed"], t_draws=[np.asarray(t) for t in c["t_draws"]])
    return ChainTrace(
        K=K,
        p=p,
        kappa_draws=None,
        omega_draws=None,
        tau2_draws=sc["tau2"],
        R_draws=sc["R"],
        logpost=sc["logpost"],
        omega_mean=np.asarray(s["omega_mean"]),
        sigma_mean=np.asarray(s["sigma_mean"]),
        kappa_mean=np.asarray(s["kappa_mean"]),
        R_mean=np.asarray(s["R_mean"]),
        R_accepted=s["R_accepted"],
        R_proposed=s["R_proposed"],
        seconds=s.get("seconds", float("nan")),
        g3p_counts=s.get("g3p_counts", {}),
        selection=sel,
    )
