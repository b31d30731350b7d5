"""Two-sample Kolmogorov-Smirnov and chi-square homogeneity tests."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from scipy import special


class EmptySample(ValueError):
    pass


class DegenerateTable(ValueError):
    pass


def ks_statistic(ref: Sequence[float], test: Sequence[float]) -> float:
    """sup |F_ref - F_test| over the pooled sample, ECDFs taken right-continuous."""
    a = np.sort(np.asarray(ref, dtype=float))
    b = np.sort(np.asarray(test, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    points = np.unique(np.concatenate([a, b]))
    fa = np.searchsorted(a, points, side="right") / a.size
    fb = np.searchsorted(b, points, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# below this the Kolmogorov tail is 1 to double precision and the series is ill-conditioned
_LAMBDA_FLOOR = 0.2


def ks_pvalue(d: float, n: int, m: int, tol: float = 1e-10) -> float:
    """Asymptotic two-sample p-value from the Kolmogorov distribution tail."""
    if n < 1 or m < 1:
        raise ValueError("sample sizes must be positive")
    lam = d * math.sqrt(n * m / (n + m))
    if lam < _LAMBDA_FLOOR:
        return 1.0
    total = 0.0
    j = 1
    while True:
        term = math.exp(-2.0 * j * j * lam * lam)
        total += term if j % 2 else -term
        if term < tol:
            break
        j += 1
    return min(1.0, max(0.0, 2.0 * total))


def chi2_two_sample(ref_counts: Mapping[str, int], test_counts: Mapping[str, int]) -> tuple[float, float]:
    """Homogeneity chi-square over the 2 x C table; categories with pooled count 0 are dropped."""
    cats = sorted(set(ref_counts) | set(test_counts))
    table = np.array([[ref_counts.get(c, 0) for c in cats], [test_counts.get(c, 0) for c in cats]], dtype=float)
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        raise DegenerateTable("fewer than two categories with non-zero pooled count")
    row = table.sum(axis=1, keepdims=True)
    if np.any(row == 0):
        raise DegenerateTable("one of the samples is empty")
    col = table.sum(axis=0, keepdims=True)
    expected = row * col / table.sum()
    stat = float(np.sum((table - expected) ** 2 / expected))
    dof = table.shape[1] - 1
    p = float(special.gammaincc(dof / 2.0, stat / 2.0))
    return stat, min(1.0, max(0.0, p))
