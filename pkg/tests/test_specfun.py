import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from mghs.specfun import (
    PcfRangeError,
    WBranch,
    erf_family,
    lambert_w,
    log_pcf_negint,
    pcf_d,
    pcf_ratio,
    pcf_ratio_asymptotic,
)

# log D_v(z) from mpmath.pcfd at 40 digits.
PCF_ORACLE = [
    (-1.0, 0.5, -0.1944732283889458671),
    (-2.0, -3.0, 4.2676781985323805145),
    (-5.5, 2.0, -6.9401765019779789599),
    (-3.0, 10.0, -31.965255350926654858),
    (-50.0, 10.0, -149.14398392542068024),
    (-150.0, -20.0, -31.705758590362202106),
    (-20.0, 0.0, -20.29973208207851664),
    (0.0, 1.7, -0.7225),
]


@pytest.mark.parametrize("order,z,expected", PCF_ORACLE)
def test_pcf_d_matches_reference(order, z, expected):
    log_abs, sign = pcf_d(order, z)
    assert sign == 1.0
    assert log_abs == pytest.approx(expected, rel=1e-11, abs=1e-11)


def test_pcf_d_rejects_unsupported_orders():
    with pytest.raises(ValueError):
        pcf_d(0.5, 1.0)
    with pytest.raises(ValueError):
        pcf_d(-0.5, 1.0)


@pytest.mark.parametrize("order,z", [(-2e4, 0.0), (-2.0, 1e5), (-2.0, math.inf)])
def test_pcf_d_range_errors(order, z):
    with pytest.raises(PcfRangeError):
        pcf_d(order, z)


def test_pcf_range_error_is_overflow():
    assert issubclass(PcfRangeError, OverflowError)


@given(n=st.integers(3, 40), z=st.floats(-15.0, 8.0))
@settings(max_examples=60, deadline=None)
def test_pcf_recurrence(n, z):
    # D_{v+1} - z D_v + v D_{v-1} = 0 with v = -n.
    lp = pcf_d(-n + 1, z)[0]
    l0 = pcf_d(-n, z)[0]
    lm = pcf_d(-n - 1, z)[0]
    ref = max(lp, l0 + math.log(abs(z) + 1e-300), lm + math.log(n))
    resid = math.exp(lp - ref) - z * math.exp(l0 - ref) - n * math.exp(lm - ref)
    assert abs(resid) < 1e-9


def test_log_pcf_negint_matches_quadrature():
    zs = np.array([-30.0, -4.0, -0.3, 0.0, 1.5, 6.0, 12.0])
    table = log_pcf_negint(4, zs)
    for i, z in enumerate(zs):
        for n in range(1, 5):
            assert table[i, n] == pytest.approx(pcf_d(-n, z)[0], rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(table[:, 0], -zs ** 2 / 4)


def test_pcf_ratio_exact_below_switch():
    nu, z = 20.0, 1.3
    direct = nu * math.exp(pcf_d(-nu - 1, z)[0] - pcf_d(-nu, z)[0])
    assert pcf_ratio(nu, z) == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("z", [-100.0, -20.0, -3.0, 0.0, 2.0, 10.0, 30.0, 100.0])
def test_pcf_ratio_continuous_at_switch(z):
    exact = pcf_ratio(200.0, z, switch=math.inf)
    approx = pcf_ratio(200.0, z)
    assert abs(exact - approx) < 1e-4


def test_pcf_ratio_asymptotic_leading_order():
    z, nu = 3.0, 500.0
    assert pcf_ratio_asymptotic(nu, z, order=1) == pytest.approx(0.5 * (-z + math.sqrt(z * z + 4 * nu - 2)))


def test_pcf_ratio_rejects_small_order():
    with pytest.raises(ValueError):
        pcf_ratio(0.5, 1.0)


@pytest.mark.parametrize("branch", [WBranch.Principal, WBranch.NegativeOne])
def test_lambert_w_against_scipy(branch):
    if branch is WBranch.Principal:
        x = np.concatenate([np.linspace(-1 / math.e + 1e-6, 0.0, 50), np.geomspace(1e-8, 1e8, 50)])
    else:
        x = -np.geomspace(1e-12, 1 / math.e - 1e-6, 100)
    w = lambert_w(x, branch)
    ref = special.lambertw(x, k=branch.value).real
    np.testing.assert_allclose(w, ref, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(w * np.exp(w), x, rtol=1e-12, atol=1e-15)


def test_lambert_w_branch_point_and_scalars():
    assert lambert_w(-1 / math.e) == pytest.approx(-1.0, abs=1e-7)
    assert lambert_w(-1 / math.e, WBranch.NegativeOne) == pytest.approx(-1.0, abs=1e-7)
    assert lambert_w(0.0) == 0.0
    assert lambert_w(math.e) == pytest.approx(1.0, rel=1e-14)
    assert isinstance(lambert_w(1.0), float)


@given(x=st.floats(-1 / math.e + 1e-9, -1e-300))
def test_lambert_w_branches_ordered(x):
    w0 = lambert_w(x)
    wm = lambert_w(x, WBranch.NegativeOne)
    assert wm <= -1.0 <= w0
    for w in (w0, wm):
        assert math.isclose(w * math.exp(w), x, rel_tol=1e-9, abs_tol=1e-300)


def test_lambert_w_domain_errors():
    with pytest.raises(ValueError):
        lambert_w(-0.5)
    with pytest.raises(ValueError):
        lambert_w(0.1, WBranch.NegativeOne)
    with pytest.raises(ValueError):
        lambert_w(np.nan)


def test_erf_family():
    x = np.array([-2.0, -0.1, 0.0, 0.7, 3.0])
    out = erf_family(x)
    np.testing.assert_allclose(out["erf"], [math.erf(v) for v in x], rtol=1e-15)
    np.testing.assert_allclose(out["erfc"], [math.erfc(v) for v in x], rtol=1e-14)
    np.testing.assert_allclose(out["normal_cdf"], special.ndtr(x), rtol=1e-14)
