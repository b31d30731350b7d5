"""Drift test battery: reference vs live batch, feature-wise or multivariate."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from ..core import Record, ReferenceSet
from ..encoding import RecordEncoder
from .correction import CORRECTIONS
from .ks import DegenerateTable, chi2_two_sample, ks_pvalue, ks_statistic
from .mmd import median_heuristic, mmd_permutation_test
from .preprocess import ModelClient, ModelUnavailable, PreprocessorError, RandomProjection, reduce_bbsd

logger = logging.getLogger(__name__)

COVARIATE = "covariate"
LABEL = "label"


class InsufficientBatch(ValueError):
    pass


@dataclass(frozen=True)
class DriftConfig:
    method: str = "ks"  # ks | mmd
    preprocessor: str = "identity"  # identity | random_projection | bbsd
    projection_dim: int = 8
    alpha: float = 0.05
    correction: str = "bonferroni"  # bonferroni | fdr_bh
    min_batch: int = 100
    n_permutations: int = 100
    seed: int = 0
    reference_cap: int = 2000
    bandwidth: float | str = "median"

    def __post_init__(self) -> None:
        if self.method not in ("ks", "mmd"):
            raise ValueError(f"unknown drift method {self.method!r}")
        if self.preprocessor not in ("identity", "random_projection", "bbsd"):
            raise ValueError(f"unknown preprocessor {self.preprocessor!r}")
        if self.correction not in CORRECTIONS:
            raise ValueError(f"unknown correction {self.correction!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_permutations < 1 or self.min_batch < 1:
            raise ValueError("n_permutations and min_batch must be positive")
        if isinstance(self.bandwidth, str) and self.bandwidth != "median":
            raise ValueError("bandwidth must be a positive number or 'median'")
        if not isinstance(self.bandwidth, str) and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def kind(self) -> str:
        return LABEL if self.preprocessor == "bbsd" else COVARIATE


@dataclass
class FeatureTest:
    name: str
    test: str
    statistic: float
    p_value: float
    reject: bool = False


@dataclass
class DriftReport:
    kind: str
    method: str
    correction: str
    alpha: float
    drift_detected: bool
    n: int
    m: int
    window: int = 0
    timestamp: int = 0
    features: list[FeatureTest] = field(default_factory=list)
    mmd2: float | None = None
    p_value: float | None = None
    bandwidth: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DriftReport:
        d = dict(d)
        d["features"] = [FeatureTest(**f) for f in d.get("features", [])]
        return cls(**d)

    @property
    def rejected_features(self) -> list[str]:
        return [f.name for f in self.features if f.reject]


def ks_featurewise(ref: np.ndarray, test: np.ndarray, names: Sequence[str]) -> list[FeatureTest]:
    out = []
    for j, name in enumerate(names):
        d = ks_statistic(ref[:, j], test[:, j])
        out.append(FeatureTest(name, "ks", d, ks_pvalue(d, len(ref), len(test))))
    return out


def _apply_correction(tests: list[FeatureTest], config: DriftConfig) -> bool:
    decisions = CORRECTIONS[config.correction]([t.p_value for t in tests], config.alpha)
    for t, reject in zip(tests, decisions):
        t.reject = reject
    return any(decisions)


class DriftDetector:
    """Reference-side state (encoder, projection, reference vectors) fitted once.

    ``run`` is a pure function of the batch and this state, so the offline
    analyzer and the live pipeline produce identical reports for identical
    inputs.
    """

    def __init__(self, reference: ReferenceSet, config: DriftConfig | None = None,
                 model_client: ModelClient | None = None):
        self.reference = reference
        self.config = config or DriftConfig()
        self.model_client = model_client
        self.schema = reference.schema
        cfg = self.config
        self.encoder: RecordEncoder | None = None
        self.projection: RandomProjection | None = None
        if cfg.preprocessor == "bbsd":
            if reference.model_outputs is not None:
                self.ref_vectors = reference.model_outputs
            elif model_client is not None:
                self.ref_vectors = reduce_bbsd(reference.records, model_client)
            else:
                raise PreprocessorError("bbsd needs reference model outputs or a model client")
            self.names = [f"class_{i}" for i in range(self.ref_vectors.shape[1])]
        elif cfg.preprocessor == "random_projection":
            self.encoder = RecordEncoder(reference)
            k = min(cfg.projection_dim, self.encoder.dim)
            try:
                self.projection = RandomProjection(self.encoder.dim, k, cfg.seed)
            except ValueError as exc:
                raise PreprocessorError(str(exc)) from exc
            self.ref_vectors = self.projection(self.encoder.transform(reference.records))
            self.names = [f"proj_{i}" for i in range(k)]
        elif cfg.method == "mmd":
            self.encoder = RecordEncoder(reference)
            self.ref_vectors = self.encoder.transform(reference.records)
            self.names = list(self.encoder.names)
        else:
            self.ref_vectors = None
            self.names = self.schema.names
        self._ref_sub = self.ref_vectors
        if cfg.method == "mmd" and self.ref_vectors is not None and len(self.ref_vectors) > cfg.reference_cap:
            rng = np.random.default_rng(cfg.seed)
            idx = np.sort(rng.choice(len(self.ref_vectors), cfg.reference_cap, replace=False))
            self._ref_sub = self.ref_vectors[idx]

    def transform(self, batch: Sequence[Record], batch_outputs: np.ndarray | None = None) -> np.ndarray:
        cfg = self.config
        if cfg.preprocessor == "bbsd":
            if batch_outputs is not None:
                return np.asarray(batch_outputs, dtype=float).reshape(len(batch), -1)
            if self.model_client is None:
                raise PreprocessorError("bbsd needs batch outputs or a model client")
            return reduce_bbsd(batch, self.model_client)
        vectors = self.encoder.transform(batch)
        return self.projection(vectors) if self.projection is not None else vectors

    def run(self, batch: Sequence[Record], batch_outputs: np.ndarray | None = None,
            window: int = 0, timestamp: int = 0) -> DriftReport:
        cfg = self.config
        if len(batch) < cfg.min_batch:
            raise InsufficientBatch(f"batch of {len(batch)} is below min_batch {cfg.min_batch}")
        if self.ref_vectors is None:
            return self._run_raw_featurewise(batch, window, timestamp)
        try:
            test_vectors = self.transform(batch, batch_outputs)
        except ModelUnavailable as exc:
            raise PreprocessorError(f"model unavailable: {exc}") from exc
        if test_vectors.shape[1] != self.ref_vectors.shape[1]:
            raise PreprocessorError("batch and reference dimensions differ after preprocessing")
        if cfg.method == "ks":
            tests = ks_featurewise(self.ref_vectors, test_vectors, self.names)
            detected = _apply_correction(tests, cfg)
            return DriftReport(cfg.kind, "ks_featurewise", cfg.correction, cfg.alpha, detected,
                               len(self.ref_vectors), len(test_vectors), window, timestamp, tests)
        return self._run_mmd(self._ref_sub, test_vectors, window, timestamp)

    def _run_mmd(self, ref: np.ndarray, test: np.ndarray, window: int, timestamp: int) -> DriftReport:
        cfg = self.config
        if cfg.bandwidth == "median":
            sigma2 = median_heuristic(np.concatenate([ref, test]))
        else:
            sigma2 = float(cfg.bandwidth)
        mmd2, p = mmd_permutation_test(ref, test, sigma2, cfg.n_permutations, cfg.seed)
        return DriftReport(cfg.kind, "mmd", cfg.correction, cfg.alpha, p <= cfg.alpha, len(ref), len(test),
                           window, timestamp, mmd2=mmd2, p_value=p, bandwidth=sigma2)

    def _run_raw_featurewise(self, batch: Sequence[Record], window: int, timestamp: int) -> DriftReport:
        cfg = self.config
        tests = []
        for i, feat in enumerate(self.schema.features):
            ref_col = self.reference.column(i)
            test_col = [r.values[i] for r in batch]
            if feat.is_numerical:
                d = ks_statistic(ref_col, test_col)
                tests.append(FeatureTest(feat.name, "ks", d, ks_pvalue(d, len(ref_col), len(test_col))))
            else:
                try:
                    stat, p = chi2_two_sample(_count(ref_col), _count(test_col))
                except DegenerateTable:
                    # both samples sit on the same single category: nothing to compare
                    stat, p = 0.0, 1.0
                tests.append(FeatureTest(feat.name, "chi2", stat, p))
        detected = _apply_correction(tests, cfg)
        return DriftReport(cfg.kind, "ks_featurewise", cfg.correction, cfg.alpha, detected,
                           len(self.reference), len(batch), window, timestamp, tests)


def _count(tokens) -> dict[str, int]:
    out: dict[str, int] = {}
    for t in tokens:
        out[t] = out.get(t, 0) + 1
    return out


def detect_drift(reference: ReferenceSet, batch: Sequence[Record], config: DriftConfig | None = None,
                 model_client: ModelClient | None = None, window: int = 0, timestamp: int = 0) -> DriftReport:
    return DriftDetector(reference, config, model_client).run(batch, window=window, timestamp=timestamp)
