"""Special functions used by the G3p sampler.

Lambert W (both real branches), parabolic cylinder functions of negative
order in log space, and thin wrappers around the error-function family.
"""
from __future__ import annotations

import enum
import math

import numpy as np
from numba import njit
from scipy import integrate, special

__all__ = [
    "WBranch",
    "PcfRangeError",
    "lambert_w",
    "lambertw_scalar",
    "pcf_d",
    "pcf_ratio",
    "pcf_ratio_asymptotic",
    "log_pcf_negint",
    "erf_family",
    "PCF_MAX_ORDER",
    "PCF_MAX_ABS_Z",
    "PCF_RATIO_SWITCH",
]

_INV_E = math.exp(-1.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

#: Largest |order| accepted by :func:`pcf_d`.
PCF_MAX_ORDER = 1.0e4
#: Largest |z| accepted by :func:`pcf_d`.
PCF_MAX_ABS_Z = 1.0e4
#: Order at which :func:`pcf_ratio` switches to the large-order approximation.
PCF_RATIO_SWITCH = 200.0


class WBranch(enum.Enum):
    """Real branch of the Lambert W function."""

    Principal = 0
    NegativeOne = -1


class PcfRangeError(OverflowError):
    """Raised when a parabolic cylinder argument is outside the supported range."""


# ---------------------------------------------------------------------------
# Lambert W
# ---------------------------------------------------------------------------

@njit(cache=True)
def lambertw_scalar(x: float, branch: int) -> float:
    """Scalar Lambert W kernel; ``branch`` is 0 or -1. No domain checks."""
    if branch == 0 and x == 0.0:
        return 0.0
    if x <= -_INV_E:
        return -1.0
    if x < -0.25:
        # Series about the branch point in p = +-sqrt(2(ex + 1)).
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        if branch == -1:
            p = -p
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    elif branch == 0:
        if x > 3.0:
            lx = math.log(x)
            w = lx - math.log(lx)
        else:
            w = math.log1p(x)
    else:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        w = min(l1 - l2 + l2 / l1, -1.0)
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        w_new = w - f / denom
        if branch == 0:
            w_new = max(w_new, -1.0)
        else:
            w_new = min(w_new, -1.0)
        if abs(w_new - w) <= 1e-15 * max(abs(w_new), 1e-300):
            w = w_new
            break
        w = w_new
    return w


@njit(cache=True)
def _lambertw_array(x, branch):
    out = np.empty_like(x)
    for i in range(x.size):
        out.flat[i] = lambertw_scalar(x.flat[i], branch)
    return out


def lambert_w(x, branch: WBranch = WBranch.Principal):
    """Real Lambert W function.

    Solves ``w * exp(w) = x`` by Halley iteration from a branch-point
    series (``x < -1/4``) or logarithmic starting values.

    Parameters
    ----------
    x : float or array_like
        Argument. ``x >= -1/e`` for the principal branch and
        ``-1/e <= x < 0`` for the ``NegativeOne`` branch.
    branch : WBranch
        Which real branch to evaluate.

    Returns
    -------
    float or ndarray
        ``w >= -1`` on the principal branch and ``w <= -1`` on the other.

    Raises
    ------
    ValueError
        If any argument lies outside the branch domain.
    """
    scalar = np.ndim(x) == 0
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    # A few ulps of slack at the branch point.
    lo = -_INV_E * (1.0 + 4.0 * np.finfo(float).eps)
    if np.any(np.isnan(arr)) or np.any(arr < lo):
        raise ValueError("lambert_w argument below -1/e")
    if branch is WBranch.NegativeOne and np.any(arr >= 0.0):
        raise ValueError("lambert_w branch -1 requires -1/e <= x < 0")
    w = _lambertw_array(np.maximum(arr, -_INV_E), branch.value)
    return float(w[0]) if scalar else w.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# Parabolic cylinder functions
# ---------------------------------------------------------------------------

def _check_pcf_range(nu: float, z: float) -> None:
    if not (math.isfinite(nu) and math.isfinite(z)):
        raise PcfRangeError(f"non-finite parabolic cylinder argument (nu={nu}, z={z})")
    if abs(nu) > PCF_MAX_ORDER or abs(z) > PCF_MAX_ABS_Z:
        raise PcfRangeError(
            f"parabolic cylinder argument out of range (nu={nu}, z={z}); "
            f"supported |nu| <= {PCF_MAX_ORDER:g}, |z| <= {PCF_MAX_ABS_Z:g}"
        )


def _log_pcf_integral(nu: float, z: float) -> float:
    """log of the integral of t^(nu-1) exp(-t^2/2 - z t) over t > 0."""
    if nu == 1.0:
        # Closed form: sqrt(2 pi) exp(z^2/2) Phi(-z).
        return z * z / 2.0 + _LOG_SQRT_2PI + float(special.log_ndtr(-z))
    tm = 0.5 * (-z + math.sqrt(z * z + 4.0 * (nu - 1.0)))
    log_peak = (nu - 1.0) * math.log(tm) - 0.5 * tm * tm - z * tm

    def integrand(t: float) -> float:
        if t <= 0.0:
            return 0.0
        return math.exp((nu - 1.0) * math.log(t) - 0.5 * t * t - z * t - log_peak)

    # The log-integrand has second derivative <= -1, so the mass beyond
    # 40 units from the peak is below exp(-800) relative to the peak.
    lo = max(0.0, tm - 40.0)
    hi = tm + 40.0
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=400)
    total = 0.0
    if tm > lo:
        total += integrate.quad(integrand, lo, tm, **opts)[0]
    total += integrate.quad(integrand, tm, hi, **opts)[0]
    return log_peak + math.log(total)


def pcf_d(order: float, z: float) -> tuple[float, float]:
    """Parabolic cylinder function D_order(z) for order 0 or order <= -1.

    Uses ``D_{-nu}(z) = exp(-z^2/4) / Gamma(nu) * int_0^inf t^(nu-1)
    exp(-t^2/2 - z t) dt`` evaluated by adaptive quadrature with the
    integrand rescaled by its peak, so the result never under- or overflows.

    Parameters
    ----------
    order : float
        Order ``v = -nu``; either ``0`` or ``<= -1``.
    z : float
        Real argument.

    Returns
    -------
    log_abs : float
        ``log |D_order(z)|``.
    sign : float
        Sign of ``D_order(z)`` (always +1 for non-positive order).

    Raises
    ------
    ValueError
        If ``order > 0`` or ``-1 < order < 0``.
    PcfRangeError
        If ``|order|`` or ``|z|`` exceeds the supported bounds.
    """
    order = float(order)
    z = float(z)
    if order > 0.0 or -1.0 < order < 0.0:
        raise ValueError("pcf_d supports order 0 and orders <= -1 only")
    nu = -order
    _check_pcf_range(nu, z)
    if nu == 0.0:
        return -z * z / 4.0, 1.0
    log_int = _log_pcf_integral(nu, z)
    return -z * z / 4.0 - math.lgamma(nu) + log_int, 1.0


def pcf_ratio_asymptotic(nu, z, order: int = 2):
    """Large-order approximation of ``nu * D_{-nu-1}(z) / D_{-nu}(z)``.

    With ``s = sqrt(z^2 + 4 nu - 2)`` the leading term is ``(s - z) / 2``;
    ``order=2`` adds ``z / (2 s^2) + 1 / (2 s^3)``, which brings the error
    at ``nu = 200`` below ``1e-5`` for all real ``z``.
    """
    z = np.asarray(z, dtype=float)
    c = 4.0 * np.asarray(nu, dtype=float) - 2.0
    s = np.sqrt(z * z + c)
    # (s - z) / 2 cancels for large positive z
    out = np.where(z > 0, 0.5 * c / (s + np.abs(z)), 0.5 * (s - z))
    if order >= 2:
        out = out + z / (2.0 * s * s) + 1.0 / (2.0 * s ** 3)
    return out[()] if out.ndim == 0 else out


def pcf_ratio(nu: float, z: float, switch: float = PCF_RATIO_SWITCH) -> float:
    """Scaled ratio ``nu * D_{-nu-1}(z) / D_{-nu}(z)``.

    Exact (through :func:`pcf_d`) for ``nu < switch``; above it the
    second-order form of :func:`pcf_ratio_asymptotic`.

    Parameters
    ----------
    nu : float
        Order magnitude, ``nu >= 1``.
    z : float
        Real argument.
    switch : float
        Order at which the approximation takes over.
    """
    if nu < 1.0:
        raise ValueError("pcf_ratio requires nu >= 1")
    if nu >= switch:
        _check_pcf_range(nu, z)
        return float(pcf_ratio_asymptotic(nu, z))
    num, _ = pcf_d(-nu - 1.0, z)
    den, _ = pcf_d(-nu, z)
    return nu * math.exp(num - den)


def log_pcf_negint(n_max: int, z):
    """``log D_{-n}(z)`` for ``n = 0..n_max``, vectorised over ``z``.

    Built from the closed form of ``D_{-1}`` and the three-term recurrence
    run on ratios. The recurrence is forward-stable for ``z <= 0``; for
    ``z > 0`` each step amplifies rounding error by about ``z^2 / n``, which
    keeps the relative error below ``1e-9`` for ``n_max <= 4`` and
    ``z <= 15``. Callers needing other ranges use :func:`pcf_d`.

    Parameters
    ----------
    n_max : int
        Highest order magnitude required.
    z : array_like
        Arguments.

    Returns
    -------
    ndarray
        Shape ``z.shape + (n_max + 1,)``.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (n_max + 1,))
    out[..., 0] = -z * z / 4.0
    if n_max == 0:
        return out
    # log D_{-1}(z) = z^2/4 + log sqrt(2 pi) + log Phi(-z)
    out[..., 1] = z * z / 4.0 + _LOG_SQRT_2PI + special.log_ndtr(-z)
    # rho_n = D_{-n-1} / D_{-n}; rho_n = (1/rho_{n-1} - z) / n
    rho = np.exp(out[..., 1] - out[..., 0])
    for n in range(1, n_max):
        rho = (1.0 / rho - z) / n
        out[..., n + 1] = out[..., n] + np.log(rho)
    return out


# ---------------------------------------------------------------------------
# Error function family
# ---------------------------------------------------------------------------

def erf_family(x):
    """Return ``erf(x)``, ``erfc(x)`` and the standard normal CDF.

    Parameters
    ----------
    x : float or array_like

    Returns
    -------
    dict
        Keys ``"erf"``, ``"erfc"`` and ``"normal_cdf"``.
    """
    return {
        "erf": special.erf(x),
        "erfc": special.erfc(x),
        "normal_cdf": 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0)),
    }
