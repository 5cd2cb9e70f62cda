"""Student-t machinery for the paired one-tailed significance test.

The t CDF is evaluated through the regularized incomplete beta function,
computed with the standard continued-fraction expansion (modified Lentz
iteration); no statistics library is involved.
"""

from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericalError

_MAX_ITER = 300
_TINY = 1e-300
_EPS = 3e-16


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, Lentz's method."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
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
    raise NumericalError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ConfigError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - log_beta(a, b))
    # The continued fraction converges fast only below the distribution mean;
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the far side.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ConfigError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        raise NumericalError("t statistic is NaN")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = df / (df + t * t)
    tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def paired_t_test_one_tailed(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """Test whether b systematically exceeds a over paired units.

    d = b - a; t = mean(d) / (std(d, n-1 divisor) / sqrt(n)); p is the upper
    tail.  Zero-variance convention: p = 0 if mean(d) > 0, 1 if < 0, 0.5 if
    every difference is zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError(f"paired samples must be equal-length vectors, got {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ConfigError(f"need at least 2 pairs, got {n}")
    d = b - a
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean > 0:
            return math.inf, 0.0
        if mean < 0:
            return -math.inf, 1.0
        return 0.0, 0.5
    t = mean / (sd / math.sqrt(n))
    return t, 1.0 - student_t_cdf(t, n - 1)


def relative_improvement(base: float, new: float) -> float:
    """Percent change of new over base; base must be positive."""
    if base <= 0:
        raise ConfigError(f"base accuracy must be positive, got {base}")
    return 100.0 * (new - base) / base
