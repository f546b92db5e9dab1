"""Special functions for gamma-bridge densities.

Everything here works on floats or numpy arrays and is evaluated in log
space where the result could overflow. No external special-function
library is used; scipy/mpmath only appear in the tests as oracles.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DomainError",
    "ASYMPTOTIC_SWITCH",
    "log_gamma",
    "log_gamma_ratio",
    "log_beta",
    "bridge_marginal_log_pdf",
    "bridge_transition_log_pdf",
    "regularized_incomplete_beta",
]

EULER_GAMMA = 0.57721566490153286061
HALF_LOG_2PI = 0.91893853320467274178

# log_gamma_ratio switches to the Stirling-difference branch once r - t
# reaches this value. Both branches agree to < 1e-10 relative there
# (checked by tests/test_specfun.py::test_ratio_branch_agreement_sweep).
ASYMPTOTIC_SWITCH = 10.0


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _zeta_minus_one(k: int, n: int = 30) -> float:
    # Euler-Maclaurin tail for sum_{m>=2} m^-k
    head = math.fsum(m ** -float(k) for m in range(2, n))
    tail = n ** (1.0 - k) / (k - 1) + 0.5 * n ** -float(k)
    bernoulli = (1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66)
    rising = float(k)
    for j, b2j in enumerate(bernoulli, start=1):
        # rising factorial k (k+1) ... (k+2j-2)
        if j > 1:
            rising *= (k + 2 * j - 3) * (k + 2 * j - 2)
        tail += b2j / math.factorial(2 * j) * rising * n ** (-k - 2 * j + 1.0)
    return head + tail


_SERIES_TERMS = 40
# coefficients of lnGamma(2+z) = (1-gamma) z + sum_k c_k z^k, |z| <= 1/2
_LG2_COEFFS = np.array(
    [0.0, 1.0 - EULER_GAMMA]
    + [(-1.0) ** k * _zeta_minus_one(k) / k for k in range(2, _SERIES_TERMS)]
)

_STIRLING = np.array(
    [
        1.0 / 12,
        -1.0 / 360,
        1.0 / 1260,
        -1.0 / 1680,
        1.0 / 1188,
        -691.0 / 360360,
        1.0 / 156,
        -3617.0 / 122400,
    ]
)


def _lgamma_2pz(z):
    # Horner on the Taylor series of lnGamma(2 + z)
    acc = np.zeros_like(z)
    for c in _LG2_COEFFS[::-1]:
        acc = acc * z + c
    return acc


def _stirling_tail(x):
    inv = 1.0 / x
    inv2 = inv * inv
    acc = np.zeros_like(x)
    for c in _STIRLING[::-1]:
        acc = acc * inv2 + c
    return acc * inv


def _lgamma_stirling(x):
    return (x - 0.5) * np.log(x) - x + HALF_LOG_2PI + _stirling_tail(x)


def _check_positive(x, name="x"):
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DomainError(f"{name} must be finite and > 0")


def _lgamma_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)

    big = x >= 8.0
    out[big] = _lgamma_stirling(x[big])

    small = ~big
    if np.any(small):
        xs = x[small].copy()
        shift = np.zeros_like(xs)
        # x < 0.5: lnG(x) = lnG(x+1) - ln x
        lo = xs < 0.5
        shift[lo] -= np.log(xs[lo])
        xs[lo] += 1.0
        # reduce (2.5, 8) down into [1.5, 2.5]
        while True:
            hi = xs > 2.5
            if not np.any(hi):
                break
            xs[hi] -= 1.0
            shift[hi] += np.log(xs[hi])
        res = np.empty_like(xs)
        mid = xs >= 1.5
        res[mid] = _lgamma_2pz(xs[mid] - 2.0)
        z = xs[~mid] - 1.0
        res[~mid] = _lgamma_2pz(z) - np.log1p(z)
        out[small] = res + shift
    return out


def log_gamma(x):
    """Natural log of the gamma function for positive real arguments.

    Series around 2 for x in [0.5, 2.5] (reached by the recurrence from
    below 8), Stirling's series for x >= 8. Relative accuracy is about
    1e-14 over [1e-3, 1e6].
    """
    arr = np.asarray(x, dtype=float)
    _check_positive(arr)
    res = _lgamma_array(np.atleast_1d(arr).ravel()).reshape(arr.shape)
    return float(res) if res.ndim == 0 else res


def _ratio_direct(r, t):
    return _lgamma_array(r) - _lgamma_array(r - t)


def _ratio_asymptotic(r, t):
    s = r - t
    # (r-1/2)ln r - (s-1/2)ln s - t, rearranged to avoid cancellation
    main = t * np.log(r) - (s - 0.5) * np.log1p(-t / r) - t
    return main + _stirling_tail(r) - _stirling_tail(s)


def log_gamma_ratio(r, t):
    """ln(Gamma(r) / Gamma(r - t)) for r > t >= 0.

    For r - t >= ASYMPTOTIC_SWITCH the large-r expansion
    r^t [1 - t(t+1)/(2r) + O(r^-2)] is used in its full Stirling form.
    """
    r_arr, t_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    if not (np.all(np.isfinite(r_arr)) and np.all(np.isfinite(t_arr))):
        raise DomainError("arguments must be finite")
    if np.any(t_arr < 0) or np.any(r_arr <= t_arr):
        raise DomainError("log_gamma_ratio needs r > t >= 0")
    rf = np.atleast_1d(r_arr).ravel().astype(float)
    tf = np.atleast_1d(t_arr).ravel().astype(float)
    out = np.zeros_like(rf)
    nz = tf > 0
    asym = nz & (rf - tf >= ASYMPTOTIC_SWITCH)
    direct = nz & ~asym
    out[asym] = _ratio_asymptotic(rf[asym], tf[asym])
    out[direct] = _ratio_direct(rf[direct], tf[direct])
    out = out.reshape(r_arr.shape)
    return float(out) if out.ndim == 0 else out


def log_beta(a, b):
    """ln B(a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    res = np.asarray(log_gamma(a)) + np.asarray(log_gamma(b)) - np.asarray(log_gamma(a + b))
    return float(res) if res.ndim == 0 else res


def _scalar_or_array(res):
    res = np.asarray(res, dtype=float)
    return float(res) if res.ndim == 0 else res


def bridge_marginal_log_pdf(x, t, r):
    """Log density of the standard gamma bridge of length r at time t.

    This is the Beta(t, r - t) log density; -inf off the open interval (0, 1).
    """
    if not (0 < t < r) or not math.isfinite(r):
        raise DomainError(f"need 0 < t < r, got t={t}, r={r}")
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    inside = (x > 0) & (x < 1)
    xi = x[inside]
    norm = log_gamma_ratio(r, r - t) - log_gamma(r - t)
    out[inside] = norm + (t - 1.0) * np.log(xi) + (r - t - 1.0) * np.log1p(-xi)
    return _scalar_or_array(out)


def bridge_transition_log_pdf(y, x, t, u, r):
    """Log density of zeta_u given zeta_t = x for a bridge of length r.

    (y - x) / (1 - x) is Beta(u - t, r - u); -inf off the open interval (x, 1).
    """
    if not (0 < t < u < r) or not math.isfinite(r):
        raise DomainError(f"need 0 < t < u < r, got t={t}, u={u}, r={r}")
    if not (0 < x < 1):
        raise DomainError(f"x must lie in (0, 1), got {x}")
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, -np.inf)
    inside = (y > x) & (y < 1)
    yi = y[inside]
    norm = log_gamma_ratio(r - t, r - u) - log_gamma(r - u)
    out[inside] = (
        norm
        + (u - t - 1.0) * np.log(yi - x)
        + (r - u - 1.0) * np.log1p(-yi)
        - (r - t - 1.0) * math.log1p(-x)
    )
    return _scalar_or_array(out)


_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 5000


def _betacf(x, a, b):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _CF_TINY, _CF_TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _CF_TINY, _CF_TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _CF_TINY, _CF_TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _CF_EPS
        if not np.any(active):
            break
    return h


def regularized_incomplete_beta(x, a, b):
    """I_x(a, b), the Beta(a, b) distribution function at x.

    Continued fraction with the usual symmetry switch
    I_x(a, b) = 1 - I_{1-x}(b, a) for x > (a + 1) / (a + b + 2).
    Arguments broadcast against each other.
    """
    x, a, b = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    if np.any(~np.isfinite(x)) or np.any((x < 0) | (x > 1)):
        raise DomainError("x must lie in [0, 1]")
    _check_positive(a, "a")
    _check_positive(b, "b")
    shape = x.shape
    x = x.ravel().astype(float)
    a = a.ravel().astype(float)
    b = b.ravel().astype(float)
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (x < 1)
    if np.any(inner):
        xi, ai, bi = x[inner], a[inner], b[inner]
        flip = xi > (ai + 1.0) / (ai + bi + 2.0)
        xx = np.where(flip, 1.0 - xi, xi)
        aa = np.where(flip, bi, ai)
        bb = np.where(flip, ai, bi)
        log_front = (
            aa * np.log(xx) + bb * np.log1p(-xx) - np.asarray(log_beta(aa, bb)).reshape(aa.shape)
        )
        val = np.exp(log_front) * _betacf(xx, aa, bb) / aa
        val = np.where(flip, 1.0 - val, val)
        out[inner] = np.clip(val, 0.0, 1.0)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out
