"""Seeded synthetic reference data and prediction streams with an injected drift."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .core import FeatureSchema, PredictionEvent, Record, write_csv
from .eventing import PREDICTIONS, Event

BASE_TIMESTAMP = 1_700_000_000_000
STEP_MS = 1000


@dataclass(frozen=True)
class DriftTransform:
    type: str = "mean_shift"  # mean_shift | category_skew
    feature: str | None = None
    delta: float = 0.0
    token: str | None = None
    probability: float = 0.0


@dataclass(frozen=True)
class SimulationSpec:
    schema: FeatureSchema
    n_reference: int = 1000
    n_stream: int = 2000
    drift_point: int = 1000
    transform: DriftTransform = field(default_factory=DriftTransform)
    seed: int = 0
    distributions: dict[str, dict[str, float]] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_reference < 1 or self.n_stream < 0:
            raise ValueError("n_reference must be positive and n_stream non-negative")
        if not 0 <= self.drift_point <= self.n_stream:
            raise ValueError("drift_point must lie within the stream")
        t = self.transform
        if t.type not in ("mean_shift", "category_skew"):
            raise ValueError(f"unknown transform {t.type!r}")
        if t.feature is not None:
            feat = self.schema.feature(t.feature)
            if t.type == "mean_shift" and not feat.is_numerical:
                raise ValueError("mean_shift needs a numerical feature")
            if t.type == "category_skew":
                if feat.is_numerical or t.token not in feat.categories:
                    raise ValueError("category_skew needs a categorical feature and one of its tokens")
                if not 0 <= t.probability <= 1:
                    raise ValueError("probability must lie in [0, 1]")
        elif t.type == "category_skew" or t.delta != 0:
            raise ValueError("transform needs a feature")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SimulationSpec:
        schema = FeatureSchema.from_dicts(d["features"])
        return cls(
            schema=schema,
            n_reference=int(d.get("n_reference", 1000)),
            n_stream=int(d.get("n_stream", 2000)),
            drift_point=int(d.get("drift_point", 1000)),
            transform=DriftTransform(**d.get("transform", {})),
            seed=int(d.get("seed", 0)),
            distributions=d.get("distributions", {}),
            config=d.get("config", {}),
        )


def _draw(spec: SimulationSpec, rng: np.random.Generator, n: int) -> list[list[Any]]:
    columns = []
    for feat in spec.schema.features:
        if feat.is_numerical:
            params = spec.distributions.get(feat.name, {})
            columns.append(rng.normal(params.get("loc", 0.0), params.get("scale", 1.0), size=n).tolist())
        else:
            columns.append([feat.categories[i] for i in rng.integers(0, len(feat.categories), size=n)])
    return [list(row) for row in zip(*columns)] if n else []


def _apply(spec: SimulationSpec, rng: np.random.Generator, rows: list[list[Any]]) -> None:
    t = spec.transform
    if t.feature is None or not rows:
        return
    j = spec.schema.index(t.feature)
    feat = spec.schema.features[j]
    if t.type == "mean_shift":
        scale = spec.distributions.get(t.feature, {}).get("scale", 1.0)
        for row in rows:
            row[j] = row[j] + t.delta * scale
        return
    others = [c for c in feat.categories if c != t.token]
    hits = rng.random(len(rows)) < t.probability
    picks = rng.integers(0, max(len(others), 1), size=len(rows))
    for row, hit, pick in zip(rows, hits, picks):
        row[j] = t.token if hit or not others else others[pick]


def simulate(spec: SimulationSpec) -> tuple[list[Record], list[Event]]:
    rng = np.random.default_rng(spec.seed)
    reference = [Record(tuple(r)) for r in _draw(spec, rng, spec.n_reference)]
    stream = _draw(spec, rng, spec.n_stream)
    # separate generator so the skew draws do not perturb the base stream
    _apply(spec, np.random.default_rng(spec.seed + 1), stream[spec.drift_point:])
    events = []
    for i, row in enumerate(stream):
        rid = f"sim-{i:06d}"
        ts = BASE_TIMESTAMP + i * STEP_MS
        pred = PredictionEvent(rid, ts, Record(tuple(row)))
        events.append(Event(PREDICTIONS, "prediction", pred.to_payload(), timestamp=ts, id=rid))
    return reference, events


def stream_index(timestamp: int) -> int:
    return (timestamp - BASE_TIMESTAMP) // STEP_MS


def write_simulation(spec: SimulationSpec, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reference, events = simulate(spec)
    paths = {"reference": out / "reference.csv", "stream": out / "stream.jsonl", "config": out / "config.yaml"}
    write_csv(paths["reference"], spec.schema, reference)
    with paths["stream"].open("w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")
    config: dict[str, Any] = {
        "features": spec.schema.to_dicts(),
        "reference": "reference.csv",
        "drift": {"min_batch": 500, "seed": spec.seed, "label": False},
    }
    for section, values in spec.config.items():
        if isinstance(values, dict):
            config.setdefault(section, {}).update(values)
        else:
            config[section] = values
    paths["config"].write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return paths
