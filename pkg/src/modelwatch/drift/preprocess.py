"""Dimensionality reduction applied to both samples before two-sample testing."""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from ..core import Record


class DimensionMismatch(ValueError):
    pass


class ModelUnavailable(RuntimeError):
    pass


class PreprocessorError(RuntimeError):
    pass


class ModelClient(Protocol):
    def predict(self, instances: list[list]) -> np.ndarray:
        """Return one output vector per instance."""
        ...


class RandomProjection:
    """Linear map by a fixed d x k Gaussian matrix with N(0, 1/k) entries."""

    def __init__(self, in_dim: int, k: int, seed: int = 0):
        if k < 1 or k > in_dim:
            raise DimensionMismatch(f"projection dimension {k} must be in [1, {in_dim}]")
        self.in_dim = in_dim
        self.k = k
        self.seed = seed
        self.matrix = np.random.default_rng(seed).normal(0.0, 1.0 / np.sqrt(k), size=(in_dim, k))

    def __call__(self, vectors) -> np.ndarray:
        v = np.asarray(vectors, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.in_dim:
            raise DimensionMismatch(f"expected vectors of dimension {self.in_dim}, got shape {v.shape}")
        return v @ self.matrix


def project_random(vectors, k: int, seed: int = 0) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    if v.ndim != 2:
        raise DimensionMismatch("expected a 2-d array of vectors")
    return RandomProjection(v.shape[1], k, seed)(v)


def reduce_bbsd(records: Sequence[Record], client: ModelClient) -> np.ndarray:
    """Map records to the model's output vectors (black-box shift detection)."""
    try:
        out = np.asarray(client.predict([r.to_list() for r in records]), dtype=float)
    except ModelUnavailable:
        raise
    except Exception as exc:
        raise ModelUnavailable(str(exc)) from exc
    if out.ndim == 1:
        out = out.reshape(-1, 1)
    if len(out) != len(records):
        raise ModelUnavailable(f"model returned {len(out)} outputs for {len(records)} records")
    return out
