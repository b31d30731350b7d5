"""Instance-level outlier scoring.

Two archetypes: an online Mahalanobis detector whose mean/covariance keep
updating with live traffic, and a kNN-distance detector frozen at fit time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .core import Record, ReferenceSet
from .encoding import RecordEncoder


class NotReady(RuntimeError):
    pass


class DimensionMismatch(ValueError):
    pass


class InsufficientReference(ValueError):
    pass


class EmptyScores(ValueError):
    pass


DEFAULT_EPSILON = 1e-6


class MahalanobisState:
    """Single-pass mean and covariance (divisor n-1) of a vector stream."""

    def __init__(self, dim: int, epsilon: float = DEFAULT_EPSILON):
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.dim = dim
        self.epsilon = epsilon
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))

    @classmethod
    def from_moments(cls, mean, cov, count: int, epsilon: float = DEFAULT_EPSILON) -> MahalanobisState:
        mean = np.asarray(mean, dtype=float)
        state = cls(len(mean), epsilon)
        state.count = count
        state.mean = mean.copy()
        state.scatter = np.asarray(cov, dtype=float) * (count - 1)
        return state

    def update(self, x) -> MahalanobisState:
        x = self._check(x)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.scatter = self.scatter + np.outer(delta, x - self.mean)
        return self

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {x.shape[0]}")
        return x

    @property
    def ready(self) -> bool:
        return self.count >= self.dim + 2

    @property
    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise NotReady("covariance needs at least two observations")
        cov = self.scatter / (self.count - 1)
        return 0.5 * (cov + cov.T)

    def regularized(self) -> np.ndarray:
        cov = self.covariance
        eps = self.epsilon * np.trace(cov) / self.dim
        return cov + eps * np.eye(self.dim)

    def score(self, x) -> float:
        x = self._check(x)
        if not self.ready:
            raise NotReady(f"need {self.dim + 2} observations, have {self.count}")
        chol = np.linalg.cholesky(self.regularized())
        z = solve_triangular(chol, x - self.mean, lower=True)
        return float(np.sqrt(z @ z))

    def leave_one_out_scores(self, points: np.ndarray) -> np.ndarray:
        """Score each of ``points`` against the statistics of the others.

        Only valid when this state was built from exactly ``points``.
        """
        pts = np.asarray(points, dtype=float)
        n, d = pts.shape
        if n != self.count or n < d + 3:
            raise NotReady("leave-one-out scoring needs the full state and n >= d + 3")
        dev = pts - self.mean
        means = self.mean - dev / (n - 1)
        scatters = self.scatter - (n / (n - 1)) * np.einsum("ni,nj->nij", dev, dev)
        covs = scatters / (n - 2)
        covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
        eps = self.epsilon * np.trace(covs, axis1=1, axis2=2) / d
        covs = covs + eps[:, None, None] * np.eye(d)
        resid = pts - means
        sol = np.linalg.solve(covs, resid[:, :, None])[:, :, 0]
        return np.sqrt(np.maximum(np.einsum("ni,ni->n", resid, sol), 0.0))


def mahalanobis_update(state: MahalanobisState, x) -> MahalanobisState:
    return state.update(x)


def mahalanobis_score(state: MahalanobisState, x) -> float:
    return state.score(x)


class KnnDetector:
    """Mean distance to the k nearest reference points in standardized space."""

    def __init__(self, points: np.ndarray, k: int, encoder: RecordEncoder | None = None):
        self._points = np.array(points, dtype=float)
        self._points.setflags(write=False)
        self.k = k
        self.encoder = encoder

    @property
    def points(self) -> np.ndarray:
        return self._points

    def score_vector(self, v) -> float:
        v = np.asarray(v, dtype=float).ravel()
        if v.shape[0] != self._points.shape[1]:
            raise DimensionMismatch(f"expected dimension {self._points.shape[1]}, got {v.shape[0]}")
        dist = np.sqrt(np.sum((self._points - v) ** 2, axis=1))
        return _mean_smallest(dist, self.k)

    def score(self, record: Record) -> float:
        return self.score_vector(self.encoder.transform([record])[0])

    def leave_one_out_scores(self, chunk: int = 512) -> np.ndarray:
        pts = self._points
        out = np.empty(len(pts))
        for start in range(0, len(pts), chunk):
            block = pts[start:start + chunk]
            dist = cdist(block, pts)
            for row in range(len(block)):
                d = np.delete(dist[row], start + row)
                out[start + row] = _mean_smallest(d, self.k)
        return out


def _mean_smallest(dist: np.ndarray, k: int) -> float:
    # sorted before summing so the result does not depend on partition order
    nearest = np.sort(np.partition(dist, k - 1)[:k])
    return float(np.sum(nearest) / k)


def knn_fit(reference: ReferenceSet, k: int = 5) -> KnnDetector:
    if not 1 <= k < len(reference):
        raise InsufficientReference(f"need reference size > k >= 1, got k={k}, n={len(reference)}")
    encoder = RecordEncoder(reference)
    return KnnDetector(encoder.transform(reference.records), k, encoder)


def knn_score(detector: KnnDetector, x) -> float:
    if isinstance(x, Record):
        return detector.score(x)
    return detector.score_vector(x)


def calibrate_threshold(scores: Sequence[float], q: float = 0.99) -> float:
    """Empirical q-quantile with linear interpolation at position (n-1)q."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise EmptyScores("no scores to calibrate on")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    return float(np.quantile(s, q, method="linear"))


@dataclass(frozen=True)
class OutlierVerdict:
    detector: str
    score: float
    threshold: float
    request_id: str | None = None

    @property
    def is_outlier(self) -> bool:
        return self.score > self.threshold

    def to_dict(self) -> dict[str, Any]:
        return {"request_id": self.request_id, "detector": self.detector, "score": self.score,
                "threshold": self.threshold, "is_outlier": self.is_outlier}


class OnlineMahalanobisDetector:
    """Mahalanobis scorer seeded from the reference and updated with every scored record.

    Each record is scored against the state *before* it is absorbed.
    """

    name = "mahalanobis"

    def __init__(self, reference: ReferenceSet, percentile: float = 0.99, epsilon: float = DEFAULT_EPSILON):
        self.encoder = RecordEncoder(reference, drop_first=True)
        vectors = self.encoder.transform(reference.records)
        self.state = MahalanobisState(self.encoder.dim, epsilon)
        for v in vectors:
            self.state.update(v)
        self.threshold = calibrate_threshold(self.state.leave_one_out_scores(vectors), percentile)

    def observe(self, record: Record, request_id: str | None = None) -> OutlierVerdict:
        v = self.encoder.transform([record])[0]
        score = self.state.score(v)
        self.state.update(v)
        return OutlierVerdict(self.name, score, self.threshold, request_id)


class StaticKnnDetector:
    name = "knn"

    def __init__(self, reference: ReferenceSet, k: int = 5, percentile: float = 0.99):
        self.detector = knn_fit(reference, k)
        self.threshold = calibrate_threshold(self.detector.leave_one_out_scores(), percentile)

    def observe(self, record: Record, request_id: str | None = None) -> OutlierVerdict:
        return OutlierVerdict(self.name, self.detector.score(record), self.threshold, request_id)
