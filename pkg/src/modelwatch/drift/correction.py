"""Multiple-testing corrections returning per-hypothesis reject decisions."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _check(pvalues: Sequence[float], alpha: float) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return p


def correct_bonferroni(pvalues: Sequence[float], alpha: float) -> list[bool]:
    p = _check(pvalues, alpha)
    if p.size == 0:
        return []
    return [bool(v <= alpha / p.size) for v in p]


def correct_fdr_bh(pvalues: Sequence[float], alpha: float) -> list[bool]:
    """Benjamini-Hochberg step-up; decisions come back in input order."""
    p = _check(pvalues, alpha)
    k = p.size
    if k == 0:
        return []
    ordered = np.sort(p)
    passing = np.nonzero(ordered <= np.arange(1, k + 1) / k * alpha)[0]
    if passing.size == 0:
        return [False] * k
    cutoff = ordered[passing[-1]]
    return [bool(v <= cutoff) for v in p]


CORRECTIONS = {"bonferroni": correct_bonferroni, "fdr_bh": correct_fdr_bh}
