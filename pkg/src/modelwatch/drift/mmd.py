"""Kernel two-sample statistics with permutation p-values."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist, pdist


class DegenerateSample(ValueError):
    pass


class SampleTooSmall(ValueError):
    pass


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def median_heuristic(pooled) -> float:
    """Half the median squared pairwise distance of the pooled sample."""
    z = _as_2d(pooled)
    if len(z) < 2:
        raise DegenerateSample("need at least two points")
    sigma2 = 0.5 * float(np.median(pdist(z, "sqeuclidean")))
    if sigma2 <= 0.0:
        if np.all(z == z[0]):
            raise DegenerateSample("all points are identical")
        # more than half the pairs coincide; fall back to the positive distances
        d = pdist(z, "sqeuclidean")
        sigma2 = 0.5 * float(np.median(d[d > 0]))
    return sigma2


def rbf_kernel(x, y, sigma2: float) -> np.ndarray:
    return np.exp(-cdist(_as_2d(x), _as_2d(y), "sqeuclidean") / (2.0 * sigma2))


def mmd2_unbiased(x, y, sigma2: float) -> float:
    """Unbiased MMD^2 with an RBF kernel; can be negative."""
    x, y = _as_2d(x), _as_2d(y)
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise SampleTooSmall("both samples need at least two points")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    kxx = rbf_kernel(x, x, sigma2)
    kyy = rbf_kernel(y, y, sigma2)
    kxy = rbf_kernel(x, y, sigma2)
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * kxy.sum() / (n * m))


def permutation_pvalue(
    x,
    y,
    statistic: Callable[[np.ndarray, np.ndarray], float],
    n_perm: int = 100,
    seed: int = 0,
) -> float:
    """Add-one smoothed permutation p-value, so p lies in [1/(1+n_perm), 1]."""
    if n_perm < 1:
        raise ValueError("n_perm must be positive")
    x, y = np.asarray(x), np.asarray(y)
    n = len(x)
    pooled = np.concatenate([x, y])
    observed = statistic(x, y)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_perm):
        perm = rng.permutation(len(pooled))
        if statistic(pooled[perm[:n]], pooled[perm[n:]]) >= observed:
            exceed += 1
    return (1 + exceed) / (1 + n_perm)


def mmd_permutation_test(x, y, sigma2: float, n_perm: int = 100, seed: int = 0) -> tuple[float, float]:
    """MMD^2_u and its permutation p-value from one pooled kernel matrix.

    Draws the same permutations as ``permutation_pvalue`` with the same seed,
    but evaluates every permuted statistic with matrix products instead of
    recomputing kernels.
    """
    x, y = _as_2d(x), _as_2d(y)
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise SampleTooSmall("both samples need at least two points")
    if n_perm < 1:
        raise ValueError("n_perm must be positive")
    pooled = np.concatenate([x, y])
    big_n = n + m
    k = rbf_kernel(pooled, pooled, sigma2)
    rng = np.random.default_rng(seed)
    masks = np.zeros((big_n, n_perm + 1))
    masks[:n, 0] = 1.0
    for p in range(1, n_perm + 1):
        masks[rng.permutation(big_n)[:n], p] = 1.0
    ka = k @ masks
    kb = k.sum(axis=1, keepdims=True) - ka
    within_x = np.sum(masks * ka, axis=0) - n
    within_y = np.sum((1.0 - masks) * kb, axis=0) - m
    between = np.sum(masks * kb, axis=0)
    stats = within_x / (n * (n - 1)) + within_y / (m * (m - 1)) - 2.0 * between / (n * m)
    observed = float(stats[0])
    p_value = (1 + int(np.sum(stats[1:] >= observed))) / (1 + n_perm)
    return observed, p_value
