"""Dense vector encodings of schema records."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import FeatureSchema, Record, ReferenceSet


class RecordEncoder:
    """z-scores numerical features (reference mean/std) and one-hot encodes categoricals.

    Numerical features that are constant on the reference carry no metric
    information and are dropped. ``drop_first`` removes the first level of every
    categorical so the columns are not collinear (needed for covariance-based
    scoring).
    """

    def __init__(self, reference: ReferenceSet, standardize: bool = True, drop_first: bool = False):
        schema = reference.schema
        self.schema = schema
        self.drop_first = drop_first
        self.numeric: list[int] = []
        means, stds = [], []
        for i in schema.numerical_indices:
            col = reference.numeric_column(i)
            std = float(col.std(ddof=1)) if len(col) > 1 else 0.0
            if std == 0.0 or not np.isfinite(std):
                continue
            self.numeric.append(i)
            means.append(float(col.mean()) if standardize else 0.0)
            stds.append(std if standardize else 1.0)
        self.means = np.array(means)
        self.stds = np.array(stds)
        self.onehot: list[tuple[int, tuple[str, ...]]] = []
        for i in schema.categorical_indices:
            cats = schema.features[i].categories
            self.onehot.append((i, cats[1:] if drop_first else cats))
        self.names = [schema.features[i].name for i in self.numeric]
        for i, cats in self.onehot:
            self.names += [f"{schema.features[i].name}={c}" for c in cats]

    @property
    def dim(self) -> int:
        return len(self.names)

    def transform(self, records: Sequence[Record]) -> np.ndarray:
        out = np.zeros((len(records), self.dim))
        n_num = len(self.numeric)
        if n_num:
            raw = np.array([[r.values[i] for i in self.numeric] for r in records], dtype=float).reshape(-1, n_num)
            out[:, :n_num] = (raw - self.means) / self.stds
        col = n_num
        for i, cats in self.onehot:
            index = {c: j for j, c in enumerate(cats)}
            for row, r in enumerate(records):
                j = index.get(r.values[i])
                if j is not None:
                    out[row, col + j] = 1.0
            col += len(cats)
        return out


def encode_numeric(records: Sequence[Record], schema: FeatureSchema) -> np.ndarray:
    """Raw (unscaled) matrix of the numerical columns."""
    idx = schema.numerical_indices
    return np.array([[r.values[i] for i in idx] for r in records], dtype=float).reshape(len(records), len(idx))
