"""Regularized incomplete gamma functions.

Implements P(a, x) and Q(a, x) with the classic split: power series for
x < a + 1, modified Lentz continued fraction otherwise.  Both routines
work in log space so large shape parameters (na in the index density can
exceed 100) do not overflow.
"""

from __future__ import annotations

import math

__all__ = ["reg_incomplete_gamma", "lower_reg", "upper_reg"]

_MAX_ITER = 2000
_EPS = 1e-16
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    """Lower regularized P(a, x) by power series, valid for x < a + 1."""
    if x <= 0.0:
        return 0.0
    ap = a
    total = 1.0 / a
    term = total
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series failed to converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_fraction(a: float, x: float) -> float:
    """Upper regularized Q(a, x) by modified Lentz continued fraction, x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma continued fraction failed to converge (a={a}, x={x})")
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def reg_incomplete_gamma(a: float, x: float) -> tuple[float, float]:
    """Return (P(a, x), Q(a, x)), the lower/upper regularized incomplete gamma.

    P + Q = 1 by construction: only one branch is computed and the other
    is its complement, so the identity holds to the last bit.
    """
    if a <= 0.0:
        raise ValueError(f"shape parameter must be positive, got {a}")
    if x < 0.0:
        raise ValueError(f"argument must be non-negative, got {x}")
    if x == 0.0:
        return 0.0, 1.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
        return p, 1.0 - p
    q = _gamma_cont_fraction(a, x)
    return 1.0 - q, q


def lower_reg(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x)."""
    return reg_incomplete_gamma(a, x)[0]


def upper_reg(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x)."""
    return reg_incomplete_gamma(a, x)[1]
