"""Service configuration: one YAML/JSON document covering every component."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .core import FeatureSchema
from .drift.detector import DriftConfig
from .explainer import AnchorConfig
from .performance import AlertRule
from .streaming import WindowScope

CONFIG_ENV = "MODELWATCH_CONFIG"
UPSTREAM_ENV = "MODELWATCH_UPSTREAM_URL"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FeatureSpec(_Section):
    name: str
    kind: Literal["numerical", "categorical"] = "numerical"
    categories: Optional[list[str]] = None


class WindowSpec(_Section):
    kind: Literal["lifetime", "count", "duration"] = "lifetime"
    size: int = 0
    seconds: float = 0.0

    def scope(self) -> WindowScope:
        return WindowScope(self.kind, self.size, self.seconds)


class UpstreamSection(_Section):
    url: Optional[str] = None
    timeout: float = 5.0


class ModelSection(_Section):
    task: Literal["classification", "regression"] = "classification"
    n_classes: int = 2


class StatsSection(_Section):
    window: WindowSpec = Field(default_factory=WindowSpec)
    histogram_bins: int = 64


class AlertRuleSpec(_Section):
    metric: str
    comparator: Literal["<", ">"]
    threshold: float
    min_count: int = 1
    name: Optional[str] = None

    def rule(self) -> AlertRule:
        return AlertRule(self.metric, self.comparator, self.threshold, self.min_count, self.name)


class MetricsSection(_Section):
    window: WindowSpec = Field(default_factory=WindowSpec)
    alert_rules: list[AlertRuleSpec] = Field(default_factory=list)


class DriftSection(_Section):
    method: Literal["ks", "mmd"] = "ks"
    preprocessor: Literal["identity", "random_projection", "bbsd"] = "identity"
    projection_dim: int = 8
    alpha: float = 0.05
    correction: Literal["bonferroni", "fdr_bh"] = "bonferroni"
    min_batch: int = 100
    n_permutations: int = 100
    seed: int = 0
    reference_cap: int = 2000
    bandwidth: Union[float, Literal["median"]] = "median"
    label: bool = True

    def drift_config(self) -> DriftConfig:
        return DriftConfig(self.method, self.preprocessor, self.projection_dim, self.alpha, self.correction,
                           self.min_batch, self.n_permutations, self.seed, self.reference_cap, self.bandwidth)


class OutlierSection(_Section):
    detector: Literal["mahalanobis", "knn", "none"] = "mahalanobis"
    k: int = 5
    percentile: float = 0.99
    epsilon: float = 1e-6
    exclude_from_drift: bool = True


class ExplainerSection(_Section):
    upstream_url: Optional[str] = None
    precision_target: float = 0.95
    n_samples: int = 200
    budget: int = 10_000
    seed: int = 0

    def anchor_config(self) -> AnchorConfig:
        return AnchorConfig(self.precision_target, self.n_samples, self.budget, self.seed)


class BrokerSection(_Section):
    queue_capacity: int = 1000
    sink_capacity: int = 10_000


class SinksSection(_Section):
    events_path: Optional[str] = None
    alerts_path: Optional[str] = None
    stdout_alerts: bool = False


class GatewaySection(_Section):
    ledger_capacity: int = 100_000
    monitoring: bool = True
    recent_outliers: int = 100


class ServiceConfig(_Section):
    features: list[FeatureSpec]
    reference: Optional[str] = None
    reference_outputs: Optional[str] = None
    upstream: UpstreamSection = Field(default_factory=UpstreamSection)
    model: ModelSection = Field(default_factory=ModelSection)
    stats: StatsSection = Field(default_factory=StatsSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    drift: DriftSection = Field(default_factory=DriftSection)
    outlier: OutlierSection = Field(default_factory=OutlierSection)
    explainer: ExplainerSection = Field(default_factory=ExplainerSection)
    broker: BrokerSection = Field(default_factory=BrokerSection)
    sinks: SinksSection = Field(default_factory=SinksSection)
    gateway: GatewaySection = Field(default_factory=GatewaySection)

    # directory the config was read from; relative paths resolve against it
    base_dir: Optional[str] = Field(default=None, exclude=True)

    @field_validator("features")
    @classmethod
    def _non_empty(cls, v: list[FeatureSpec]) -> list[FeatureSpec]:
        if not v:
            raise ValueError("at least one feature is required")
        return v

    def feature_schema(self) -> FeatureSchema:
        return FeatureSchema.from_dicts([f.model_dump(exclude_none=True) for f in self.features])

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p


def parse_config(data: dict[str, Any], base_dir: str | Path | None = None) -> ServiceConfig:
    cfg = ServiceConfig.model_validate(data)
    cfg.base_dir = str(base_dir) if base_dir is not None else None
    upstream = os.environ.get(UPSTREAM_ENV)
    if upstream:
        cfg.upstream.url = upstream
    return cfg


def load_config(path: str | Path | None = None) -> ServiceConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        raise FileNotFoundError(f"no config path given and {CONFIG_ENV} is unset")
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return parse_config(data, path.parent)
