"""Black-box anchor explanations built purely from prediction queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import Record, ReferenceSet
from .drift.preprocess import ModelClient, ModelUnavailable


class BudgetExhausted(RuntimeError):
    def __init__(self, partial: AnchorExplanation):
        super().__init__(f"query budget exhausted after {partial.queries_used} queries")
        self.partial = partial


@dataclass(frozen=True)
class Predicate:
    feature: str
    index: int
    op: str  # in_bin | equals
    lower: float = -math.inf
    upper: float = math.inf
    token: str | None = None

    def holds(self, value: Any) -> bool:
        if self.op == "equals":
            return value == self.token
        return self.lower < float(value) <= self.upper

    def to_dict(self) -> dict[str, Any]:
        if self.op == "equals":
            cond: dict[str, Any] = {"op": "equals", "value": self.token}
        else:
            cond = {"op": "in_bin",
                    "lower": None if math.isinf(self.lower) else self.lower,
                    "upper": None if math.isinf(self.upper) else self.upper}
        return {"feature": self.feature, "condition": cond}

    def __str__(self) -> str:
        if self.op == "equals":
            return f"{self.feature} = {self.token}"
        parts = []
        if not math.isinf(self.lower):
            parts.append(f"{self.lower:.4g} <")
        parts.append(self.feature)
        if not math.isinf(self.upper):
            parts.append(f"<= {self.upper:.4g}")
        return " ".join(parts)


def discretize(instance: Record, reference: ReferenceSet) -> list[Predicate]:
    """One candidate per feature: the quartile bin holding a numerical value, or equality for a token."""
    out = []
    for i, feat in enumerate(reference.schema.features):
        value = instance.values[i]
        if not feat.is_numerical:
            out.append(Predicate(feat.name, i, "equals", token=value))
            continue
        edges = np.unique(np.quantile(reference.numeric_column(i), [0.25, 0.5, 0.75]))
        if len(edges) == 1 and np.ptp(reference.numeric_column(i)) == 0:
            out.append(Predicate(feat.name, i, "in_bin"))
            continue
        bounds = [-math.inf, *edges.tolist(), math.inf]
        j = int(np.searchsorted(edges, float(value), side="left"))
        out.append(Predicate(feat.name, i, "in_bin", bounds[j], bounds[j + 1]))
    return out


def coverage(anchor: Sequence[Predicate], reference: ReferenceSet) -> float:
    hits = sum(all(p.holds(r.values[p.index]) for p in anchor) for r in reference.records)
    return hits / len(reference)


class _CountingClient:
    def __init__(self, client: ModelClient):
        self.client = client
        self.queries = 0

    def predict_classes(self, rows: list[list]) -> np.ndarray:
        try:
            out = np.asarray(self.client.predict(rows), dtype=float)
        except ModelUnavailable:
            raise
        except Exception as exc:
            raise ModelUnavailable(str(exc)) from exc
        self.queries += len(rows)
        if out.ndim == 1 or out.shape[1] == 1:
            return np.rint(out.reshape(-1)).astype(int)
        return np.argmax(out, axis=1)


def _perturb(anchor: Sequence[Predicate], instance: Record, reference: ReferenceSet,
             n_samples: int, seed: int) -> list[list]:
    rng = np.random.default_rng(seed)
    d = len(instance)
    # drawn regardless of the anchor so every evaluation sees the same background rows
    rows = rng.integers(0, len(reference), size=(n_samples, d))
    fixed = {p.index for p in anchor}
    samples = []
    for i in range(n_samples):
        samples.append([instance.values[j] if j in fixed else reference.records[rows[i, j]].values[j]
                        for j in range(d)])
    return samples


def estimate_precision(anchor: Sequence[Predicate], instance: Record, client: ModelClient,
                       reference: ReferenceSet, n_samples: int = 200, seed: int = 0,
                       target: int | None = None) -> tuple[float, int]:
    """Share of perturbed instances (free features resampled from reference rows) keeping the prediction."""
    counting = client if isinstance(client, _CountingClient) else _CountingClient(client)
    if target is None:
        target = int(counting.predict_classes([instance.to_list()])[0])
    preds = counting.predict_classes(_perturb(anchor, instance, reference, n_samples, seed))
    return float(np.mean(preds == target)), n_samples


@dataclass(frozen=True)
class AnchorConfig:
    precision_target: float = 0.95
    n_samples: int = 200
    budget: int = 10_000
    seed: int = 0


@dataclass
class AnchorExplanation:
    predicates: list[Predicate]
    precision: float
    coverage: float
    predicted_class: int
    queries_used: int
    converged: bool
    n_samples: int
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "predicates": [p.to_dict() for p in self.predicates],
            "anchor": [str(p) for p in self.predicates],
            "precision": self.precision,
            "coverage": self.coverage,
            "predicted_class": self.predicted_class,
            "queries_used": self.queries_used,
            "converged": self.converged,
            "n_samples": self.n_samples,
        }


def anchor_search(instance: Record, client: ModelClient, reference: ReferenceSet,
                  config: AnchorConfig | None = None) -> AnchorExplanation:
    """Greedy forward selection of predicates until the precision target is met.

    Raises BudgetExhausted carrying the best anchor found when the next
    evaluation would exceed the query budget.
    """
    cfg = config or AnchorConfig()
    if cfg.budget < 1 + cfg.n_samples:
        raise ValueError("budget must cover the instance query plus one precision evaluation")
    counting = _CountingClient(client)
    target = int(counting.predict_classes([instance.to_list()])[0])
    candidates = discretize(instance, reference)
    anchor: list[Predicate] = []
    history: list[float] = []

    def result(converged: bool) -> AnchorExplanation:
        return AnchorExplanation(list(anchor), history[-1] if history else 0.0, coverage(anchor, reference),
                                 target, counting.queries, converged, cfg.n_samples, list(history))

    def evaluate(preds: list[Predicate]) -> float:
        if counting.queries + cfg.n_samples > cfg.budget:
            raise BudgetExhausted(result(False))
        p, _ = estimate_precision(preds, instance, counting, reference, cfg.n_samples, cfg.seed, target)
        return p

    history.append(evaluate(anchor))
    while history[-1] < cfg.precision_target and len(anchor) < len(candidates):
        best: tuple[float, Predicate] | None = None
        chosen = {p.index for p in anchor}
        for cand in candidates:
            if cand.index in chosen:
                continue
            p = evaluate(anchor + [cand])
            if best is None or p > best[0]:
                best = (p, cand)
        anchor.append(best[1])
        history.append(best[0])
    return result(history[-1] >= cfg.precision_target)
