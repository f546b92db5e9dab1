import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gammabridge import specfun as sf

# ln Gamma(x), 40-digit mpmath
LOG_GAMMA = [
    (1e-8, 18.420680738180208905),
    (0.3, 1.0957979948180755217),
    (0.5, 0.57236494292470008707),
    (1.0, 0.0),
    (1.5, -0.12078223763524522235),
    (2.5, 0.28468287047291915963),
    (7.9, 8.3242658680088089235),
    (8.0, 8.5251613610654143002),
    (33.3, 82.603723581654952928),
    (1e5, 1051287.7089736568949),
]

# ln Gamma(r) - ln Gamma(r - t), mpmath
LOG_GAMMA_RATIO = [
    (5.0, 0.5, 0.72431725950550339914),
    (20.0, 3.0, 8.6680240811188212325),
    (1e6, 0.25, 3.4538774832410294635),
    (12.5, 2.5, 5.9325200318549760904),
    (3.0, 2.999, -6.2140317048239083731),
]

# I_x(a, b), mpmath
INC_BETA = [
    (0.3, 0.5, 0.5, 0.36901011956554538276),
    (0.9, 2.0, 3.0, 0.9963),
    (0.01, 0.1, 5.0, 0.76908892078434628503),
    (0.5, 50.0, 60.0, 0.83090729390166941434),
    (0.999, 1e-3, 2.0, 0.99999999949916641693),
]


@pytest.mark.parametrize("x,expected", LOG_GAMMA)
def test_log_gamma_matches_mpmath(x, expected):
    assert sf.log_gamma(x) == pytest.approx(expected, rel=1e-14, abs=1e-15)


def test_log_gamma_vectorized_and_exact_at_integers():
    xs = np.arange(1, 30, dtype=float)
    expected = np.array([math.lgamma(v) for v in xs])
    np.testing.assert_allclose(sf.log_gamma(xs), expected, rtol=1e-14, atol=1e-14)
    assert abs(sf.log_gamma(1.0)) < 1e-15


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_log_gamma_domain(bad):
    with pytest.raises(sf.DomainError):
        sf.log_gamma(bad)


@pytest.mark.parametrize("r,t,expected", LOG_GAMMA_RATIO)
def test_log_gamma_ratio_matches_mpmath(r, t, expected):
    assert sf.log_gamma_ratio(r, t) == pytest.approx(expected, rel=1e-13)


def test_log_gamma_ratio_zero_shift_is_exactly_zero():
    assert sf.log_gamma_ratio(7.0, 0.0) == 0.0


@pytest.mark.parametrize("r,t", [(1.0, 1.0), (1.0, 2.0), (2.0, -0.1), (math.inf, 1.0)])
def test_log_gamma_ratio_domain(r, t):
    with pytest.raises(sf.DomainError):
        sf.log_gamma_ratio(r, t)


def test_ratio_branch_agreement_sweep():
    # both branches evaluated on the same points around the switch
    r = np.linspace(10.0, 60.0, 401)
    for t in (0.01, 0.5, 1.0, 3.7, 9.5):
        rr = r + t
        direct = sf._ratio_direct(rr, np.full_like(rr, t))
        asym = sf._ratio_asymptotic(rr, np.full_like(rr, t))
        np.testing.assert_allclose(asym, direct, rtol=1e-12, atol=1e-13)


def test_ratio_large_r_behaves_like_power():
    # Gamma(r)/Gamma(r-t) ~ r^t for r >> t
    r = 1e12
    assert sf.log_gamma_ratio(r, 0.7) == pytest.approx(0.7 * math.log(r), rel=1e-12)


@pytest.mark.parametrize("t,r", [(0.5, 1.0), (0.3, 2.0), (1.0, 4.0), (25.0, 40.0)])
def test_marginal_log_pdf_is_beta(t, r):
    x = np.linspace(0.01, 0.99, 33)
    np.testing.assert_allclose(sf.bridge_marginal_log_pdf(x, t, r), stats.beta(t, r - t).logpdf(x), rtol=1e-11)


def test_marginal_log_pdf_off_support():
    assert sf.bridge_marginal_log_pdf(0.0, 0.5, 1.0) == -math.inf
    assert sf.bridge_marginal_log_pdf(1.0, 0.5, 1.0) == -math.inf
    with pytest.raises(sf.DomainError):
        sf.bridge_marginal_log_pdf(0.5, 1.0, 1.0)


def test_transition_log_pdf_is_scaled_beta():
    x, t, u, r = 0.3, 0.5, 1.2, 2.0
    y = np.linspace(0.31, 0.99, 21)
    ref = stats.beta(u - t, r - u).logpdf((y - x) / (1 - x)) - math.log(1 - x)
    np.testing.assert_allclose(sf.bridge_transition_log_pdf(y, x, t, u, r), ref, rtol=1e-11)
    assert sf.bridge_transition_log_pdf(0.2, x, t, u, r) == -math.inf


@pytest.mark.parametrize("x,a,b,expected", INC_BETA)
def test_incomplete_beta_matches_mpmath(x, a, b, expected):
    assert sf.regularized_incomplete_beta(x, a, b) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_incomplete_beta_endpoints_and_broadcast():
    assert sf.regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0
    assert sf.regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0
    out = sf.regularized_incomplete_beta(np.array([[0.1], [0.6]]), np.array([0.5, 2.0, 7.0]), 3.0)
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out, stats.beta.cdf(np.array([[0.1], [0.6]]), [0.5, 2.0, 7.0], 3.0), rtol=1e-12)


@pytest.mark.parametrize("x,a,b", [(1.5, 1.0, 1.0), (0.5, 0.0, 1.0), (0.5, 1.0, -2.0)])
def test_incomplete_beta_domain(x, a, b):
    with pytest.raises(sf.DomainError):
        sf.regularized_incomplete_beta(x, a, b)


pos = st.floats(min_value=1e-3, max_value=200.0, allow_nan=False)
unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


# dyadic points, so that x and 1 - x are both exact in floating point
dyadic = st.integers(min_value=0, max_value=2**30).map(lambda k: k / 2**30)


@settings(max_examples=200, deadline=None)
@given(x=dyadic, a=pos, b=pos)
def test_incomplete_beta_reflection(x, a, b):
    lhs = sf.regularized_incomplete_beta(x, a, b)
    rhs = 1.0 - sf.regularized_incomplete_beta(1.0 - x, b, a)
    assert 0.0 <= lhs <= 1.0
    assert lhs == pytest.approx(rhs, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=pos, b=pos, x1=unit, x2=unit)
def test_incomplete_beta_monotone(a, b, x1, x2):
    lo, hi = sorted((x1, x2))
    assert sf.regularized_incomplete_beta(lo, a, b) <= sf.regularized_incomplete_beta(hi, a, b) + 1e-15


@settings(max_examples=200, deadline=None)
@given(x=st.floats(min_value=1e-6, max_value=1e6))
def test_log_gamma_recurrence(x):
    # ln Gamma(x + 1) = ln Gamma(x) + ln x
    lhs = sf.log_gamma(x + 1.0)
    rhs = sf.log_gamma(x) + math.log(x)
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-13)


@settings(max_examples=200, deadline=None)
@given(s=st.floats(min_value=1e-3, max_value=1e4), t=st.floats(min_value=0.0, max_value=50.0))
def test_log_gamma_ratio_against_lgamma(s, t):
    r = s + t
    if r <= t:
        return
    expected = math.lgamma(r) - math.lgamma(r - t)
    assert sf.log_gamma_ratio(r, t) == pytest.approx(expected, rel=1e-11, abs=1e-9)
