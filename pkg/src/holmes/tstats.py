"""Student-t distribution via the regularized incomplete beta function."""
from __future__ import annotations

import math

from scipy.optimize import brentq

from .errors import RejectedInput

__all__ = ["betainc_reg", "student_t_cdf", "student_t_sf", "student_t_quantile"]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _betacf(a, b, x):
    # Modified Lentz evaluation of the continued fraction for I_x(a, b).
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float, xc: float | None = None) -> float:
    """Regularized incomplete beta function I_x(a, b) for a, b > 0.

    ``xc`` may carry 1 - x computed without cancellation by the caller; it
    matters when x sits next to 1.
    """
    if not (a > 0 and b > 0):
        raise RejectedInput("betainc_reg needs a, b > 0")
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(xc))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, xc) / b


def _check_df(df):
    if not df >= 1:
        raise RejectedInput("degrees of freedom must be >= 1")


def _half_tail(t, df):
    # P(T > |t|), computed without cancellation.
    denom = df + t * t
    return 0.5 * betainc_reg(df / 2.0, 0.5, df / denom, t * t / denom)


def student_t_sf(t: float, df: float) -> float:
    """Upper tail probability P(T > t)."""
    _check_df(df)
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = _half_tail(t, df)
    return tail if t >= 0 else 1.0 - tail


def student_t_cdf(t: float, df: float) -> float:
    _check_df(df)
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = _half_tail(t, df)
    return 1.0 - tail if t >= 0 else tail


def student_t_quantile(q: float, df: float) -> float:
    """Inverse of :func:`student_t_cdf`, found by bracketed root search."""
    _check_df(df)
    if not 0.0 < q < 1.0:
        raise RejectedInput("quantile level must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    sign = 1.0 if q > 0.5 else -1.0
    upper = q if q > 0.5 else 1.0 - q
    hi = 1.0
    while student_t_cdf(hi, df) < upper:
        hi *= 2.0
    root = brentq(lambda t: student_t_cdf(t, df) - upper, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return sign * root
