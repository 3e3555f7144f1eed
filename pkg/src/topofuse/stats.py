"""Paired t-test with the p-value evaluated through the regularized
incomplete beta function (continued-fraction form), so no external
statistics dependency is needed.

For paired samples a, b with differences d: t = mean(d) / (sd(d)/sqrt(n))
on n-1 degrees of freedom, and the two-sided p-value is
I_{nu/(nu+t^2)}(nu/2, 1/2). Zero-variance differences make t undefined;
the result is flagged degenerate instead of raising.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["TTestResult", "paired_ttest", "betainc", "student_t_sf"]


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    dof: int
    degenerate: bool = False


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-15:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: int) -> float:
    """Two-sided survival: P(|T| >= |t|) for Student's t with ``dof``."""
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    x = dof / (dof + t * t)
    return betainc(dof / 2.0, 0.5, x)


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test of per-run scores a versus b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test needs two equal-length 1-D score arrays")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    dof = n - 1
    if sd == 0.0:
        return TTestResult(t=float("nan"), p=float("nan"), dof=dof, degenerate=True)
    t = float(d.mean() / (sd / math.sqrt(n)))
    return TTestResult(t=t, p=student_t_sf(t, dof), dof=dof)
