"""Welch's unequal-variance two-sample t-test.

The two-tailed p-value comes from the Student-t distribution evaluated with a
continued-fraction regularized incomplete beta, in double precision:
p = I_x(df/2, 1/2) with x = df / (df + t^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from kinetic_triage.errors import DataError

_MAX_CF_ITER = 300
_CF_EPS = 3e-15
_CF_FPMIN = 1e-300


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float
    alpha: float
    significant: bool


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise DataError("incomplete beta continued fraction did not converge")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise DataError(f"incomplete beta: x must be in [0,1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df <= 0:
        raise DataError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))


def _mean_var(sample: Sequence[float]) -> tuple[float, float]:
    n = len(sample)
    mean = sum(sample) / n
    var = sum((v - mean) ** 2 for v in sample) / (n - 1)
    return mean, var


def welch_from_summary(mean_a: float, sd_a: float, n_a: int,
                       mean_b: float, sd_b: float, n_b: int,
                       alpha: float = 0.05) -> TTestResult:
    """Welch t-test from summary statistics (sample sd, n per side)."""
    if n_a < 2 or n_b < 2:
        raise DataError(f"welch t-test needs n >= 2 per side, got {n_a} and {n_b}")
    if sd_a < 0 or sd_b < 0:
        raise DataError("standard deviations must be non-negative")
    va, vb = sd_a * sd_a, sd_b * sd_b
    if va == 0.0 and vb == 0.0:
        raise DataError("degenerate samples: both variances are zero")
    sa, sb = va / n_a, vb / n_b
    se2 = sa + sb
    t = (mean_a - mean_b) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (n_a - 1) + sb * sb / (n_b - 1))
    p = student_t_two_tailed_p(t, df)
    return TTestResult(t=t, df=df, p=p, alpha=alpha, significant=p < alpha)


def welch_ttest(sample_a: Sequence[float], sample_b: Sequence[float],
                alpha: float = 0.05) -> TTestResult:
    """Welch t-test on raw samples with Welch-Satterthwaite degrees of freedom."""
    if len(sample_a) < 2 or len(sample_b) < 2:
        raise DataError(
            f"welch t-test needs n >= 2 per side, got {len(sample_a)} and {len(sample_b)}")
    mean_a, va = _mean_var(sample_a)
    mean_b, vb = _mean_var(sample_b)
    return welch_from_summary(mean_a, math.sqrt(va), len(sample_a),
                              mean_b, math.sqrt(vb), len(sample_b), alpha)
