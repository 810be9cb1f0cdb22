"""Three-parameter Gamma distribution G3p(gamma, alpha, beta).

The density on ``x > 0`` is proportional to ``x**gamma * exp(-alpha**2 x**2
+ beta x)``. Draws use a modified rejection scheme on the standardized
variable ``t = (x - mu) / sigma`` with a Normal proposal ``h`` of variance
``omega**2 = 1 / (2 alpha**2 sigma**2)``:

1. draw ``t ~ h`` and accept when ``t1 <= t <= t2`` (the band where the
   target ``g`` dominates ``h``);
2. otherwise accept with probability ``g(t) / h(t)``;
3. otherwise draw from the difference density ``d = g - h`` on the band by
   inner rejection under a Laplace hat.

Every call therefore returns after exactly one outer proposal. Limit
regimes (large negative or positive ``beta / alpha`` and large ``gamma``)
are handled by Gamma or Normal approximations.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy import integrate, special, stats

from .specfun import lambertw_scalar, log_pcf_negint, pcf_d, pcf_ratio_asymptotic

__all__ = [
    "G3pParams",
    "G3pMoments",
    "HatParams",
    "ApproxRegime",
    "KLReference",
    "KLDivergence",
    "SamplerStats",
    "SamplerTables",
    "GAMMA_LIMIT_RATIO",
    "NORMAL_BETA_RATIO",
    "NORMAL_GAMMA_ORDER",
    "regime",
    "moments",
    "log_normalizer",
    "log_density",
    "cdf",
    "cdf_gamma1",
    "hat_params",
    "sample",
    "sample_gamma1",
    "step_acceptance_probs",
    "kl_divergence",
    "tabulate",
    "default_tables",
]

GAMMA_LIMIT_RATIO = -20.0
NORMAL_BETA_RATIO = 50.0
NORMAL_GAMMA_ORDER = 200

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ApproxRegime(enum.Enum):
    """How a parameter triple is sampled."""

    Exact = "exact"
    GammaLimit = "gamma_limit"
    NormalLimit = "normal_limit"


class KLReference(enum.Enum):
    """Reference distribution for :func:`kl_divergence`."""

    GammaLimit = "gamma_limit"
    NormalBeta = "normal_beta"
    NormalGamma = "normal_gamma"


@dataclass(frozen=True)
class G3pParams:
    """Parameters of G3p: integer ``gamma >= 1``, ``alpha > 0``, real ``beta``."""

    gamma: int
    alpha: float
    beta: float

    def __post_init__(self):
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise ValueError(f"gamma must be an integer >= 1, got {self.gamma}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not math.isfinite(self.beta):
            raise ValueError(f"beta must be finite, got {self.beta}")
        object.__setattr__(self, "gamma", int(self.gamma))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def ratio(self) -> float:
        """Scale-free shape parameter ``beta / alpha``."""
        return self.beta / self.alpha

    @property
    def z(self) -> float:
        """Parabolic cylinder argument ``-beta / (alpha sqrt 2)``."""
        return -self.beta / (self.alpha * _SQRT2)


class G3pMoments(NamedTuple):
    mu: float
    sigma2: float


@dataclass(frozen=True)
class HatParams:
    """Standardized-scale quantities of the rejection scheme.

    ``t1 < tmax < t2`` bound the band where ``g >= h``; ``(lap_L, lap_R)``
    are the tangency points of the Laplace hat ``c / sqrt(2 pi) *
    exp(-|t - b| / delta)`` over ``d = g - h``. ``laplace_ok`` is false when
    the Newton solve or the coverage check failed, in which case Step 3
    uses a flat hat instead.
    """

    omega2: float
    t1: float
    t2: float
    tmax: float
    lap_b: float
    lap_c: float
    lap_delta: float
    lap_L: float
    lap_R: float
    laplace_ok: bool
    newton_residual: float
    mu: float
    sigma: float
    log_norm: float
    log_rmax: float


class KLDivergence(NamedTuple):
    """Both directions of a KL divergence between G3p (q) and a reference (p)."""

    q_p: float
    p_q: float


class SamplerStats:
    """Counters filled by the sampler.

    Attributes
    ----------
    counts : ndarray of int64
        ``[draws, outer_proposals, step1, step2, step3, inner_proposals,
        flat_hat_setups, hat_violations]``.
    """

    FIELDS = (
        "draws",
        "outer_proposals",
        "step1",
        "step2",
        "step3",
        "inner_proposals",
        "flat_hat_setups",
        "hat_violations",
    )

    def __init__(self):
        self.counts = np.zeros(len(self.FIELDS), dtype=np.int64)

    def __getattr__(self, name):
        if name in SamplerStats.FIELDS:
            return int(self.counts[SamplerStats.FIELDS.index(name)])
        raise AttributeError(name)

    def as_dict(self) -> dict:
        return {k: int(v) for k, v in zip(self.FIELDS, self.counts)}


# ---------------------------------------------------------------------------
# Regimes and moments
# ---------------------------------------------------------------------------

def regime(params: G3pParams) -> ApproxRegime:
    """Sampling regime.

    ``gamma >= 200`` uses the large-order Normal limit; otherwise
    ``beta / alpha <= -20`` uses the Gamma limit and ``beta / alpha >= 50``
    the large-ratio Normal limit. Everything else (including ``beta = 0``,
    which is sampled exactly through a square-root Gamma) is ``Exact``.
    """
    if params.gamma >= NORMAL_GAMMA_ORDER:
        return ApproxRegime.NormalLimit
    if params.ratio <= GAMMA_LIMIT_RATIO:
        return ApproxRegime.GammaLimit
    if params.ratio >= NORMAL_BETA_RATIO:
        return ApproxRegime.NormalLimit
    return ApproxRegime.Exact


def _log_d_triple(params: G3pParams) -> tuple[float, float, float]:
    """``log D_{-gamma-m}(z)`` for ``m = 1, 2, 3``."""
    g, z = params.gamma, params.z
    if z <= 0.0 or g == 1:
        row = log_pcf_negint(g + 3, z)
        return float(row[g + 1]), float(row[g + 2]), float(row[g + 3])
    return tuple(pcf_d(-(g + m), z)[0] for m in (1, 2, 3))


def _exact_moments_and_norm(params: G3pParams) -> tuple[float, float, float]:
    g, a, b = params.gamma, params.alpha, params.beta
    l1, l2, l3 = _log_d_triple(params)
    mu = (g + 1) / (a * _SQRT2) * math.exp(l2 - l1)
    ex2 = (g + 1) * (g + 2) / (2.0 * a * a) * math.exp(l3 - l1)
    sigma2 = ex2 - mu * mu
    log_norm = -b * b / (8.0 * a * a) + 0.5 * (g + 1) * math.log(2.0 * a * a) - math.lgamma(g + 1) - l1
    return mu, sigma2, log_norm


def normal_beta_moments(params: G3pParams) -> G3pMoments:
    """Large ``beta / alpha`` Normal limit: ``(beta / (2 alpha^2), 1 / (2 alpha^2))``."""
    a2 = params.alpha ** 2
    return G3pMoments(params.beta / (2.0 * a2), 1.0 / (2.0 * a2))


def normal_gamma_moments(params: G3pParams) -> G3pMoments:
    """Large ``gamma`` Normal limit from the leading-order ratio approximation.

    With ``R_v = (-z + sqrt(z^2 + 4 v - 2)) / 2`` approximating
    ``v D_{-v-1}(z) / D_{-v}(z)``, the mean is ``R_{gamma+1} / (alpha sqrt 2)``
    and the second moment is ``R_{gamma+1} R_{gamma+2} / (2 alpha^2)``.
    """
    g, a, z = params.gamma, params.alpha, params.z
    r1 = float(pcf_ratio_asymptotic(g + 1, z, order=1))
    s1 = math.sqrt(z * z + 4.0 * g + 2.0)
    s2 = math.sqrt(z * z + 4.0 * g + 6.0)
    # r1 (r2 - r1) with r2 - r1 = 2 / (s1 + s2), free of cancellation
    return G3pMoments(r1 / (a * _SQRT2), r1 / ((s1 + s2) * a * a))


def gamma_limit_moments(params: G3pParams) -> G3pMoments:
    """Gamma(gamma + 1, rate -beta) limit for large negative ``beta / alpha``."""
    g, b = params.gamma, params.beta
    return G3pMoments((g + 1) / -b, (g + 1) / (b * b))


def exact_moments(params: G3pParams) -> G3pMoments:
    """Mean and variance from parabolic cylinder ratios (no approximation)."""
    mu, s2, _ = _exact_moments_and_norm(params)
    return G3pMoments(mu, s2)


def moments(params: G3pParams) -> G3pMoments:
    """Mean and variance used by the sampler in the current regime.

    Parameters
    ----------
    params : G3pParams

    Returns
    -------
    G3pMoments
        Exact moments in the ``Exact`` regime (including ``beta = 0``) and
        the corresponding limit moments otherwise.
    """
    reg = regime(params)
    if reg is ApproxRegime.GammaLimit:
        return gamma_limit_moments(params)
    if reg is ApproxRegime.NormalLimit:
        if params.gamma >= NORMAL_GAMMA_ORDER:
            return normal_gamma_moments(params)
        return normal_beta_moments(params)
    return exact_moments(params)


def log_normalizer(params: G3pParams) -> float:
    """Log of the constant ``C`` with ``f(x) = C x^gamma exp(-alpha^2 x^2 + beta x)``."""
    g, a, b = params.gamma, params.alpha, params.beta
    l1 = _log_d_triple(params)[0]
    return -b * b / (8.0 * a * a) + 0.5 * (g + 1) * math.log(2.0 * a * a) - math.lgamma(g + 1) - l1


def log_density(params: G3pParams, x):
    """Normalized log-density.

    Parameters
    ----------
    params : G3pParams
    x : float or array_like
        Points, all strictly positive.

    Raises
    ------
    ValueError
        If any ``x <= 0``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0):
        raise ValueError("log_density requires x > 0")
    out = (
        log_normalizer(params)
        + params.gamma * np.log(xa)
        - params.alpha ** 2 * xa * xa
        + params.beta * xa
    )
    return float(out) if out.ndim == 0 else out


def cdf_gamma1(alpha: float, beta, x):
    """Closed-form CDF of G3p(1, alpha, beta).

    Vectorised over ``beta`` and ``x`` (``alpha`` may also be an array).
    With ``m = beta / (2 alpha^2)`` the unnormalized integral is
    ``(1 - E) / (2 alpha^2) + m sqrt(pi) / (2 alpha) * e^{alpha^2 m^2}
    [erf(alpha (x - m)) + erf(alpha m)]`` with ``E = exp(-alpha^2 x^2 +
    beta x)``. The ``m < 0`` branch is written with ``erfcx`` and the
    ``m >= 0`` branch is rescaled by ``exp(-alpha^2 m^2)`` so that neither
    overflows.

    Raises
    ------
    ValueError
        If any ``x < 0``.
    """
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta, dtype=float)
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0):
        raise ValueError("cdf_gamma1 requires x >= 0")
    a, b, xa = np.broadcast_arrays(a, b, xa)
    a2 = a * a
    m = b / (2.0 * a2)
    am = a * m
    k = m * math.sqrt(math.pi) / (2.0 * a)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        finite_x = np.isfinite(xa)
        xf = np.where(finite_x, xa, 0.0)
        # m < 0: everything expressed through erfcx with positive arguments.
        log_e = -a2 * xf * xf + b * xf
        e = np.exp(log_e)
        num_neg = -np.expm1(log_e) / (2.0 * a2) + k * (
            special.erfcx(-am) - special.erfcx(a * (xf - m)) * e
        )
        den_neg = 1.0 / (2.0 * a2) + k * special.erfcx(-am)
        # m >= 0: rescaled by exp(-a^2 m^2).
        s = np.exp(-am * am)
        num_pos = (s - np.exp(-a2 * (xf - m) ** 2)) / (2.0 * a2) + k * (
            special.erf(a * (xf - m)) + special.erf(am)
        )
        den_pos = s / (2.0 * a2) + k * special.erfc(-am)
        out = np.where(m < 0.0, num_neg / den_neg, num_pos / den_pos)
    out = np.where(finite_x, out, 1.0)
    out = np.where(xa == 0.0, 0.0, out)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def cdf(params: G3pParams, x):
    """CDF of G3p at ``x`` (closed form for ``gamma = 1``, quadrature otherwise)."""
    if params.gamma == 1:
        return cdf_gamma1(params.alpha, params.beta, x)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0.0):
        raise ValueError("cdf requires x >= 0")
    mom = exact_moments(params)
    centre, spread = mom.mu, math.sqrt(mom.sigma2)
    log_c = log_normalizer(params)

    def f(u):
        if u <= 0.0:
            return 0.0
        return math.exp(log_c + params.gamma * math.log(u) - params.alpha ** 2 * u * u + params.beta * u)

    order = np.argsort(xa)
    out = np.empty_like(xa)
    acc, prev = 0.0, 0.0
    for idx in order:
        xi = xa[idx]
        if math.isinf(xi):
            out[idx] = 1.0
            continue
        if xi > prev:
            pts = [p for p in (centre - 5 * spread, centre, centre + 5 * spread) if prev < p < xi]
            acc += integrate.quad(f, prev, xi, points=pts or None, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
            prev = xi
        out[idx] = min(acc, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------
# Counter layout: see SamplerStats.FIELDS.
_C_DRAWS, _C_OUTER, _C_S1, _C_S2, _C_S3, _C_INNER, _C_FLAT, _C_VIOL = range(8)
# Hat record layout used inside the kernels.
_H_T1, _H_T2, _H_TMAX, _H_B, _H_C, _H_DELTA, _H_L, _H_R, _H_OK, _H_RES, _H_FLATM, _H_READY = range(12)
_HAT_LEN = 12


@njit(cache=True)
def _log_g(t, gamma, alpha, beta, mu, sigma, log_norm):
    x = sigma * t + mu
    if x <= 0.0:
        return -np.inf
    return math.log(sigma) + log_norm + gamma * math.log(x) - alpha * alpha * x * x + beta * x


@njit(cache=True)
def _log_h(t, omega):
    return -math.log(omega) - _LOG_SQRT_2PI - 0.5 * t * t / (omega * omega)


@njit(cache=True)
def _d_derivs(t, gamma, alpha, beta, mu, sigma, log_norm, omega):
    """d, d' and d'' of the difference density at standardized ``t``."""
    x = sigma * t + mu
    h = math.exp(_log_h(t, omega))
    w2 = omega * omega
    h1 = -t / w2 * h
    h2 = (t * t / (w2 * w2) - 1.0 / w2) * h
    if x <= 0.0:
        return -h, -h1, -h2
    g = math.exp(_log_g(t, gamma, alpha, beta, mu, sigma, log_norm))
    q = gamma / x - 2.0 * alpha * alpha * x + beta
    g1 = g * sigma * q
    g2 = g * sigma * sigma * (q * q - gamma / (x * x) - 2.0 * alpha * alpha)
    return g - h, g1 - h1, g2 - h2


@njit(cache=True)
def _band(gamma, alpha, beta, mu, sigma, log_norm, hat):
    """Fill t1, t2, tmax of the hat record; returns ``log r(tmax)``."""
    omega = 1.0 / (_SQRT2 * alpha * sigma)
    kappa = beta - 2.0 * alpha * alpha * mu
    if not kappa < 0.0:
        return np.nan
    a_const = math.log(omega * sigma) + log_norm + _LOG_SQRT_2PI + alpha * alpha * mu * mu
    xmax = -gamma / kappa
    lrmax = gamma * math.log(xmax) + kappa * xmax + a_const
    arg = -math.exp(-1.0 - max(lrmax, 0.0) / gamma)
    x1 = gamma / kappa * lambertw_scalar(arg, 0)
    x2 = gamma / kappa * lambertw_scalar(arg, -1)
    hat[_H_T1] = (x1 - mu) / sigma
    hat[_H_T2] = (x2 - mu) / sigma
    hat[_H_TMAX] = (xmax - mu) / sigma
    return lrmax


@njit(cache=True)
def _log_r(x, gamma, kappa, a_const):
    if x <= 0.0:
        return -np.inf
    return gamma * math.log(x) + kappa * x + a_const


@njit(cache=True)
def _laplace_hat(gamma, alpha, beta, mu, sigma, log_norm, hat, guess_l, guess_r):
    """Solve for the Laplace hat over d on [t1, t2] and verify coverage.

    On failure ``hat[_H_OK]`` is 0 and a flat hat bound is stored instead.
    """
    omega = 1.0 / (_SQRT2 * alpha * sigma)
    t1 = hat[_H_T1]
    t2 = hat[_H_T2]
    width = t2 - t1
    # Flat bound: d <= g <= g(mode of g clipped to the band).
    xm = (beta + math.sqrt(beta * beta + 8.0 * alpha * alpha * gamma)) / (4.0 * alpha * alpha)
    tm = min(max((xm - mu) / sigma, t1), t2)
    hat[_H_FLATM] = math.exp(_log_g(tm, gamma, alpha, beta, mu, sigma, log_norm))
    hat[_H_OK] = 0.0
    hat[_H_READY] = 1.0
    if not (width > 0.0):
        return
    # Mode of d from a coarse grid.
    best_t = 0.5 * (t1 + t2)
    best_d = -1.0
    for i in range(1, 32):
        t = t1 + width * i / 32.0
        dv = _d_derivs(t, gamma, alpha, beta, mu, sigma, log_norm, omega)[0]
        if dv > best_d:
            best_d = dv
            best_t = t
    if not (best_d > 0.0):
        return
    if guess_l > t1 and guess_l < best_t and guess_r < t2 and guess_r > best_t:
        lo, hi = guess_l, guess_r
    else:
        lo = max(best_t - width / 5.0, t1 + 1e-3 * width)
        hi = min(best_t + width / 5.0, t2 - 1e-3 * width)
    res = np.inf
    for _ in range(100):
        dl, dl1, dl2 = _d_derivs(lo, gamma, alpha, beta, mu, sigma, log_norm, omega)
        dr, dr1, dr2 = _d_derivs(hi, gamma, alpha, beta, mu, sigma, log_norm, omega)
        if not (dl > 0.0 and dr > 0.0):
            return
        delta = 0.5 * (hi - lo)
        ll1 = dl1 / dl
        lr1 = dr1 / dr
        ll2 = dl2 / dl - ll1 * ll1
        lr2 = dr2 / dr - lr1 * lr1
        f1 = ll1 - 1.0 / delta
        f2 = lr1 + 1.0 / delta
        res = max(abs(f1), abs(f2)) * delta
        if res < 1e-12:
            break
        k = 1.0 / (2.0 * delta * delta)
        j11 = ll2 - k
        j12 = k
        j21 = k
        j22 = lr2 - k
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not np.isfinite(det):
            return
        step_l = (j22 * f1 - j12 * f2) / det
        step_r = (-j21 * f1 + j11 * f2) / det
        lam = 1.0
        for _h in range(60):
            nl = lo - lam * step_l
            nr = hi - lam * step_r
            if nl > t1 and nr < t2 and nl < nr:
                break
            lam *= 0.5
        lo = lo - lam * step_l
        hi = hi - lam * step_r
    if not (res < 1e-9):
        return
    dl = _d_derivs(lo, gamma, alpha, beta, mu, sigma, log_norm, omega)[0]
    dr = _d_derivs(hi, gamma, alpha, beta, mu, sigma, log_norm, omega)[0]
    delta = 0.5 * (hi - lo)
    b = 0.5 * (lo + hi + delta * math.log(dr / dl))
    c = math.e * math.sqrt(2.0 * math.pi * dr * dl)
    # Coverage check on a grid over the band.
    for i in range(129):
        t = t1 + width * i / 128.0
        dv = _d_derivs(t, gamma, alpha, beta, mu, sigma, log_norm, omega)[0]
        sv = c / _SQRT_2PI * math.exp(-abs(t - b) / delta)
        if dv > sv * (1.0 + 1e-9):
            return
    hat[_H_B] = b
    hat[_H_C] = c
    hat[_H_DELTA] = delta
    hat[_H_L] = lo
    hat[_H_R] = hi
    hat[_H_RES] = res
    hat[_H_OK] = 1.0


@njit(cache=True)
def _draw_difference(gamma, alpha, beta, mu, sigma, log_norm, hat, rng, counts):
    """Exact draw from d = g - h restricted to [t1, t2] (Step 3)."""
    omega = 1.0 / (_SQRT2 * alpha * sigma)
    t1 = hat[_H_T1]
    t2 = hat[_H_T2]
    if hat[_H_OK] == 1.0:
        b = hat[_H_B]
        c = hat[_H_C]
        delta = hat[_H_DELTA]
        while True:
            counts[_C_INNER] += 1
            e = rng.exponential()
            t = b + delta * e if rng.random() < 0.5 else b - delta * e
            if t < t1 or t > t2:
                continue
            sv = c / _SQRT_2PI * math.exp(-abs(t - b) / delta)
            dv = math.exp(_log_g(t, gamma, alpha, beta, mu, sigma, log_norm)) - math.exp(_log_h(t, omega))
            if dv > sv:
                # The hat failed to cover d here; switch to the flat hat.
                counts[_C_VIOL] += 1
                hat[_H_OK] = 0.0
                break
            if rng.random() * sv <= dv:
                return t
    counts[_C_FLAT] += 1
    bound = hat[_H_FLATM]
    while True:
        counts[_C_INNER] += 1
        t = t1 + (t2 - t1) * rng.random()
        dv = math.exp(_log_g(t, gamma, alpha, beta, mu, sigma, log_norm)) - math.exp(_log_h(t, omega))
        if rng.random() * bound <= dv:
            return t


@njit(cache=True)
def _draw_exact(gamma, alpha, beta, mu, sigma, log_norm, hat, rng, counts, guess_l, guess_r):
    """One exact draw (Steps 1 to 3); ``hat`` holds the band and lazy hat."""
    counts[_C_DRAWS] += 1
    counts[_C_OUTER] += 1
    omega = 1.0 / (_SQRT2 * alpha * sigma)
    t = omega * rng.standard_normal()
    if hat[_H_T1] <= t <= hat[_H_T2]:
        counts[_C_S1] += 1
        return sigma * t + mu
    x = sigma * t + mu
    if x > 0.0:
        kappa = beta - 2.0 * alpha * alpha * mu
        a_const = math.log(omega * sigma) + log_norm + _LOG_SQRT_2PI + alpha * alpha * mu * mu
        if rng.random() < math.exp(_log_r(x, gamma, kappa, a_const)):
            counts[_C_S2] += 1
            return x
    counts[_C_S3] += 1
    if hat[_H_READY] == 0.0:
        _laplace_hat(gamma, alpha, beta, mu, sigma, log_norm, hat, guess_l, guess_r)
    return sigma * _draw_difference(gamma, alpha, beta, mu, sigma, log_norm, hat, rng, counts) + mu


@njit(cache=True)
def _draw_exact_many(gamma, alpha, beta, mu, sigma, log_norm, n, rng, counts, guess_l, guess_r):
    hat = np.zeros(_HAT_LEN)
    out = np.empty(n)
    lrmax = _band(gamma, alpha, beta, mu, sigma, log_norm, hat)
    if not np.isfinite(lrmax):
        out[:] = np.nan
        return out
    for i in range(n):
        out[i] = _draw_exact(gamma, alpha, beta, mu, sigma, log_norm, hat, rng, counts, guess_l, guess_r)
    return out


@njit(cache=True)
def _truncated_normal(mu, sigma, rng):
    while True:
        x = mu + sigma * rng.standard_normal()
        if x > 0.0:
            return x


@njit(cache=True)
def _gamma1_setup(alpha, beta):
    """Exact (mu, sigma, log_norm) for gamma = 1 from the erfc recurrence."""
    z = -beta / (alpha * _SQRT2)
    # log D_{-1}(z) = z^2/4 + log(sqrt(pi/2) erfc(z / sqrt 2))
    l1 = 0.25 * z * z + math.log(math.sqrt(0.5 * math.pi) * math.erfc(z / _SQRT2))
    rho = math.exp(l1 + 0.25 * z * z)  # D_{-1} / D_0
    logs = np.empty(5)
    logs[1] = l1
    for n in range(1, 4):
        rho = (1.0 / rho - z) / n
        logs[n + 1] = logs[n] + math.log(rho)
    mu = 2.0 / (alpha * _SQRT2) * math.exp(logs[3] - logs[2])
    ex2 = 3.0 / (alpha * alpha) * math.exp(logs[4] - logs[2])
    sigma = math.sqrt(ex2 - mu * mu)
    log_norm = -beta * beta / (8.0 * alpha * alpha) + math.log(2.0 * alpha * alpha) - logs[2]
    return mu, sigma, log_norm


@njit(cache=True)
def _sample_gamma1_kernel(alpha, beta, rng, counts, out):
    hat = np.zeros(_HAT_LEN)
    for i in range(alpha.size):
        a = alpha[i]
        b = beta[i]
        ratio = b / a
        if b == 0.0:
            # sqrt of Gamma(shape 1, rate a^2).
            out[i] = math.sqrt(rng.gamma(1.0, 1.0 / (a * a)))
        elif ratio <= GAMMA_LIMIT_RATIO:
            out[i] = rng.gamma(2.0, -1.0 / b)
        elif ratio >= NORMAL_BETA_RATIO:
            out[i] = _truncated_normal(b / (2.0 * a * a), 1.0 / (_SQRT2 * a), rng)
        else:
            mu, sigma, log_norm = _gamma1_setup(a, b)
            hat[:] = 0.0
            lrmax = _band(1, a, b, mu, sigma, log_norm, hat)
            if not np.isfinite(lrmax):
                out[i] = np.nan
                continue
            out[i] = _draw_exact(1, a, b, mu, sigma, log_norm, hat, rng, counts, 0.0, 0.0)


# ---------------------------------------------------------------------------
# Public sampling API
# ---------------------------------------------------------------------------

def _exact_setup(params: G3pParams) -> tuple[float, float, float]:
    mu, s2, log_norm = _exact_moments_and_norm(params)
    if not (s2 > 0.0 and mu > 0.0):
        raise FloatingPointError(f"non-positive G3p moments for {params}: mu={mu}, sigma2={s2}")
    return mu, math.sqrt(s2), log_norm


def hat_params(params: G3pParams, mom: G3pMoments | None = None, tables: "SamplerTables | None" = None) -> HatParams:
    """Construct the rejection-scheme quantities for an ``Exact`` triple.

    Parameters
    ----------
    params : G3pParams
    mom : G3pMoments, optional
        Exact moments; computed when omitted.
    tables : SamplerTables, optional
        Used only to warm-start the Newton solve for the Laplace hat.

    Returns
    -------
    HatParams
    """
    if mom is None:
        mu, sigma, log_norm = _exact_setup(params)
    else:
        mu, sigma = mom.mu, math.sqrt(mom.sigma2)
        log_norm = log_normalizer(params)
    hat = np.zeros(_HAT_LEN)
    lrmax = _band(params.gamma, params.alpha, params.beta, mu, sigma, log_norm, hat)
    if not np.isfinite(lrmax):
        raise FloatingPointError(f"no crossing band for {params}")
    gl, gr = _warm_start(tables, params)
    _laplace_hat(params.gamma, params.alpha, params.beta, mu, sigma, log_norm, hat, gl, gr)
    omega2 = 1.0 / (2.0 * params.alpha ** 2 * sigma ** 2)
    return HatParams(
        omega2=omega2,
        t1=float(hat[_H_T1]),
        t2=float(hat[_H_T2]),
        tmax=float(hat[_H_TMAX]),
        lap_b=float(hat[_H_B]),
        lap_c=float(hat[_H_C]),
        lap_delta=float(hat[_H_DELTA]),
        lap_L=float(hat[_H_L]),
        lap_R=float(hat[_H_R]),
        laplace_ok=bool(hat[_H_OK] == 1.0),
        newton_residual=float(hat[_H_RES]),
        mu=mu,
        sigma=sigma,
        log_norm=log_norm,
        log_rmax=float(lrmax),
    )


def _warm_start(tables, params) -> tuple[float, float]:
    if tables is None:
        return 0.0, 0.0
    rec = tables.lookup(params.gamma, params.ratio)
    if rec is None:
        return 0.0, 0.0
    return rec["lap_L"], rec["lap_R"]


def sample(params: G3pParams, rng: np.random.Generator, size: int | None = None,
           stats: SamplerStats | None = None, tables: "SamplerTables | None" = None):
    """Draw from G3p(gamma, alpha, beta).

    Parameters
    ----------
    params : G3pParams
    rng : numpy.random.Generator
    size : int, optional
        Number of draws; a float is returned when omitted.
    stats : SamplerStats, optional
        Counters updated in place (exact regime only).
    tables : SamplerTables, optional
        Warm-start source for the Laplace hat. Draws are unaffected apart
        from floating-point differences in the converged hat.

    Returns
    -------
    float or ndarray
    """
    n = 1 if size is None else int(size)
    counts = stats.counts if stats is not None else np.zeros(len(SamplerStats.FIELDS), dtype=np.int64)
    g, a, b = params.gamma, params.alpha, params.beta
    if b == 0.0:
        out = np.sqrt(rng.gamma((g + 1) / 2.0, 1.0 / (a * a), size=n))
    else:
        reg = regime(params)
        if reg is ApproxRegime.GammaLimit:
            out = rng.gamma(g + 1.0, 1.0 / -b, size=n)
        elif reg is ApproxRegime.NormalLimit:
            mu, s2 = moments(params)
            out = np.array([_truncated_normal(mu, math.sqrt(s2), rng) for _ in range(n)])
        else:
            mu, sigma, log_norm = _exact_setup(params)
            gl, gr = _warm_start(tables, params)
            out = _draw_exact_many(g, a, b, mu, sigma, log_norm, n, rng, counts, gl, gr)
            if np.any(np.isnan(out)):
                raise FloatingPointError(f"no crossing band for {params}")
    return float(out[0]) if size is None else out


def sample_gamma1(alpha, beta, rng: np.random.Generator, stats: SamplerStats | None = None) -> np.ndarray:
    """One draw from G3p(1, alpha_i, beta_i) for each pair of parameters.

    The compiled path used for the local shrinkage updates.

    Parameters
    ----------
    alpha, beta : array_like
        Same shape; ``alpha > 0``.
    rng : numpy.random.Generator
    stats : SamplerStats, optional
    """
    a = np.ascontiguousarray(alpha, dtype=float).ravel()
    b = np.ascontiguousarray(beta, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("alpha and beta must have the same shape")
    if np.any(~(a > 0.0)) or np.any(~np.isfinite(b)):
        raise ValueError("sample_gamma1 needs alpha > 0 and finite beta")
    counts = stats.counts if stats is not None else np.zeros(len(SamplerStats.FIELDS), dtype=np.int64)
    out = np.empty_like(a)
    _sample_gamma1_kernel(a, b, rng, counts, out)
    if np.any(np.isnan(out)):
        raise FloatingPointError("G3p(1, .) draw failed to find a crossing band")
    return out.reshape(np.shape(alpha))


def step_acceptance_probs(params: G3pParams) -> dict:
    """Probabilities of acceptance at Step 1, 2 and 3 of the exact scheme.

    ``P(E1)`` is the proposal mass on the band, ``P(E3)`` the integral of
    ``g - h`` over the band, and ``P(E2) = 1 - P(E1) - P(E3)``.
    """
    hp = hat_params(params)
    omega = math.sqrt(hp.omega2)
    p1 = float(special.ndtr(hp.t2 / omega) - special.ndtr(hp.t1 / omega))

    def d(t):
        x = hp.sigma * t + hp.mu
        if x <= 0.0:
            return 0.0
        lg = math.log(hp.sigma) + hp.log_norm + params.gamma * math.log(x) - params.alpha ** 2 * x * x + params.beta * x
        return math.exp(lg) - math.exp(-math.log(omega) - _LOG_SQRT_2PI - 0.5 * t * t / hp.omega2)

    p3 = integrate.quad(d, hp.t1, hp.t2, points=[hp.tmax], epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    p3 = max(p3, 0.0)
    return {"E1": p1, "E2": 1.0 - p1 - p3, "E3": p3}


# ---------------------------------------------------------------------------
# KL diagnostics
# ---------------------------------------------------------------------------

def _kl_gamma_closed(params: G3pParams, mom: G3pMoments) -> float:
    """KL(Gamma(d, c) || G3p) with moment-matched shape ``d`` and rate ``c``."""
    g, a, b = params.gamma, params.alpha, params.beta
    d = mom.mu ** 2 / mom.sigma2
    c = mom.mu / mom.sigma2
    l1 = _log_d_triple(params)[0]
    return float(
        (g + 1) * math.log(c)
        + (d - 1 - g) * special.digamma(d)
        - d * (1.0 + b / c - a * a * (d + 1) / (c * c))
        + math.lgamma(g + 1)
        - math.lgamma(d)
        - (0.5 * (g + 1) * math.log(2 * a * a) - b * b / (8 * a * a) - l1)
    )


def _kl_window(logq, logp, lo, hi, points):
    """KL both ways between two log-densities renormalized on ``[lo, hi]``."""
    grid = np.linspace(lo, hi, 2001)
    shift_q = np.max(logq(grid))
    shift_p = np.max(logp(grid))
    opts = dict(epsabs=0.0, epsrel=1e-10, limit=400, points=points)
    zq = integrate.quad(lambda t: math.exp(logq(t) - shift_q), lo, hi, **opts)[0]
    zp = integrate.quad(lambda t: math.exp(logp(t) - shift_p), lo, hi, **opts)[0]
    lzq = math.log(zq) + shift_q
    lzp = math.log(zp) + shift_p

    def kl(la, lza, lb, lzb):
        def f(t):
            u = la(t) - lza
            return math.exp(u) * (u - (lb(t) - lzb))

        return integrate.quad(f, lo, hi, **opts)[0]

    return kl(logq, lzq, logp, lzp), kl(logp, lzp, logq, lzq)


def kl_divergence(params: G3pParams, reference: KLReference) -> KLDivergence:
    """KL divergence between G3p (``q``) and a limit distribution (``p``).

    Parameters
    ----------
    params : G3pParams
    reference : KLReference
        ``GammaLimit``: Gamma with the exact mean and variance; ``p_q`` is
        the closed form and ``q_p`` comes from quadrature on ``(0, inf)``.
        ``NormalBeta`` / ``NormalGamma``: Normal with the corresponding
        limit moments; both densities are renormalized on ``(max(mu - 5
        sigma, 0), mu + 5 sigma)`` and integrated there.

    Returns
    -------
    KLDivergence
        ``q_p = KL(q || p)`` and ``p_q = KL(p || q)``.
    """
    mom_exact = exact_moments(params)
    log_c = log_normalizer(params)
    g, a, b = params.gamma, params.alpha, params.beta

    def logq(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            val = log_c + g * np.log(x) - a * a * x * x + b * x
        return float(val) if val.ndim == 0 else val

    if reference is KLReference.GammaLimit:
        p_q = _kl_gamma_closed(params, mom_exact)
        d = mom_exact.mu ** 2 / mom_exact.sigma2
        c = mom_exact.mu / mom_exact.sigma2
        logp = lambda x: stats.gamma.logpdf(x, d, scale=1.0 / c)  # noqa: E731
        sd = math.sqrt(mom_exact.sigma2)
        lo = max(mom_exact.mu - 40 * sd, 0.0)
        hi = mom_exact.mu + 40 * sd

        def f(x):
            if x <= 0.0:
                return 0.0
            lq = logq(x)
            return math.exp(lq) * (lq - float(logp(x)))

        q_p = integrate.quad(f, lo, hi, points=[mom_exact.mu], epsabs=0.0, epsrel=1e-10, limit=400)[0]
        return KLDivergence(float(q_p), float(p_q))
    if reference is KLReference.NormalBeta:
        mu, s2 = normal_beta_moments(params)
    else:
        mu, s2 = normal_gamma_moments(params)
    sd = math.sqrt(s2)
    lo = max(mu - 5.0 * sd, 0.0)
    hi = mu + 5.0 * sd

    def log_normal(x):
        x = np.asarray(x, dtype=float)
        val = -0.5 * ((x - mu) / sd) ** 2
        return float(val) if val.ndim == 0 else val

    def logq_safe(x):
        x = np.maximum(np.asarray(x, dtype=float), 1e-300)
        return logq(x)

    pts = [p for p in (mu, mom_exact.mu) if lo < p < hi]
    q_p, p_q = _kl_window(logq_safe, log_normal, lo if lo > 0 else 1e-300, hi, pts or None)
    return KLDivergence(max(float(q_p), 0.0), max(float(p_q), 0.0))


# ---------------------------------------------------------------------------
# Tabulation
# ---------------------------------------------------------------------------

_TABLE_FIELDS = ("t1", "t2", "tmax", "lap_b", "lap_c", "lap_delta", "lap_L", "lap_R",
                 "mu_scaled", "sigma_scaled", "laplace_ok")
_TABLE_MAGIC = b"G3PT"
_TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct("<4sIIII")


class SamplerTables:
    """Scale-free hat quantities on a grid of ``(gamma, beta / alpha)`` knots.

    All stored quantities depend on ``(gamma, beta / alpha)`` only; the
    moments are stored multiplied by ``alpha``. Lookups interpolate
    linearly in both coordinates and return ``None`` outside the grid.
    The sampler uses the table to warm-start the Laplace-hat Newton solve,
    so draws remain exact for any table.
    """

    def __init__(self, gamma_knots, ratio_knots, values):
        self.gamma_knots = np.asarray(gamma_knots, dtype=float)
        self.ratio_knots = np.asarray(ratio_knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.values.setflags(write=False)
        expected = (self.gamma_knots.size, self.ratio_knots.size, len(_TABLE_FIELDS))
        if self.values.shape != expected:
            raise ValueError(f"table values have shape {self.values.shape}, expected {expected}")

    fields = _TABLE_FIELDS

    def lookup(self, gamma: float, ratio: float) -> dict | None:
        gk, rk = self.gamma_knots, self.ratio_knots
        if not (gk[0] <= gamma <= gk[-1] and rk[0] <= ratio <= rk[-1]):
            return None
        i = int(np.clip(np.searchsorted(gk, gamma, side="right") - 1, 0, max(gk.size - 2, 0)))
        j = int(np.clip(np.searchsorted(rk, ratio, side="right") - 1, 0, max(rk.size - 2, 0)))
        if gk.size == 1:
            wg, i1 = 0.0, i
        else:
            i1 = i + 1
            wg = (gamma - gk[i]) / (gk[i1] - gk[i])
        if rk.size == 1:
            wr, j1 = 0.0, j
        else:
            j1 = j + 1
            wr = (ratio - rk[j]) / (rk[j1] - rk[j])
        v = self.values
        cell = ((1 - wg) * (1 - wr) * v[i, j] + (1 - wg) * wr * v[i, j1]
                + wg * (1 - wr) * v[i1, j] + wg * wr * v[i1, j1])
        rec = dict(zip(_TABLE_FIELDS, (float(c) for c in cell)))
        corners = v[[i, i, i1, i1], [j, j1, j, j1], _TABLE_FIELDS.index("laplace_ok")]
        rec["laplace_ok"] = bool(np.all(corners == 1.0))
        return rec

    def to_bytes(self) -> bytes:
        head = _TABLE_HEADER.pack(_TABLE_MAGIC, _TABLE_VERSION, self.gamma_knots.size,
                                  self.ratio_knots.size, len(_TABLE_FIELDS))
        body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes()
                        for arr in (self.gamma_knots, self.ratio_knots, self.values))
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SamplerTables":
        magic, version, ng, nr, nf = _TABLE_HEADER.unpack_from(blob, 0)
        if magic != _TABLE_MAGIC:
            raise ValueError("not a G3p table file")
        if version != _TABLE_VERSION:
            raise ValueError(f"unsupported G3p table version {version}")
        if nf != len(_TABLE_FIELDS):
            raise ValueError("table field count mismatch")
        off = _TABLE_HEADER.size
        expected = off + 8 * (ng + nr + ng * nr * nf)
        if len(blob) != expected:
            raise ValueError(f"table file has {len(blob)} bytes, expected {expected}")
        data = np.frombuffer(blob, dtype="<f8", offset=off)
        gk = data[:ng].copy()
        rk = data[ng:ng + nr].copy()
        vals = data[ng + nr:].reshape(ng, nr, nf).copy()
        return cls(gk, rk, vals)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SamplerTables":
        return cls.from_bytes(Path(path).read_bytes())


def _table_record(gamma: int, ratio: float) -> np.ndarray:
    params = G3pParams(gamma, 1.0, ratio)
    hp = hat_params(params)
    return np.array([hp.t1, hp.t2, hp.tmax, hp.lap_b, hp.lap_c, hp.lap_delta, hp.lap_L, hp.lap_R,
                     hp.mu, hp.sigma, 1.0 if hp.laplace_ok else 0.0])


def tabulate(gamma_knots, ratio_knots) -> SamplerTables:
    """Build a :class:`SamplerTables` by direct computation at every knot.

    Knots with ``ratio == 0`` are evaluated at a tiny positive ratio since
    the hat is not used on the square-root-Gamma path.
    """
    gk = np.asarray(gamma_knots, dtype=float)
    rk = np.asarray(ratio_knots, dtype=float)
    if np.any(np.diff(gk) <= 0) or np.any(np.diff(rk) <= 0):
        raise ValueError("knot lists must be strictly increasing")
    vals = np.empty((gk.size, rk.size, len(_TABLE_FIELDS)))
    for i, g in enumerate(gk):
        for j, r in enumerate(rk):
            vals[i, j] = _table_record(int(g), r if r != 0.0 else 1e-12)
    return SamplerTables(gk, rk, vals)


def default_ratio_knots(n: int = 64, lo: float = GAMMA_LIMIT_RATIO, hi: float = NORMAL_BETA_RATIO) -> np.ndarray:
    """``n`` knots in ``[lo, hi]``, uniform in ``asinh``: dense near 0, geometric in the tails."""
    return np.sinh(np.linspace(math.asinh(lo), math.asinh(hi), n))


DEFAULT_GAMMA_KNOTS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 30, 50, 100, 150, 200)


def default_tables() -> SamplerTables:
    """Default grid: 17 integer orders by 64 ratio knots."""
    return tabulate(DEFAULT_GAMMA_KNOTS, default_ratio_knots())
