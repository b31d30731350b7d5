"""Label-dependent model performance: confusion matrices, regression errors, alert rules."""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .streaming import WindowedSketch, WindowScope


class LabelOutOfRange(ValueError):
    pass


class TaskMismatch(ValueError):
    pass


class EmptyState(ValueError):
    pass


class UnknownMetricName(KeyError):
    pass


class ConfusionMatrix:
    """Counts indexed ``[true class][predicted class]``."""

    def __init__(self, n_classes: int):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.n_classes = n_classes
        self.matrix = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def count(self) -> int:
        return int(self.matrix.sum())

    def update(self, pair: tuple[Any, Any]) -> None:
        predicted, truth = pair
        p, t = _as_label(predicted, self.n_classes), _as_label(truth, self.n_classes)
        self.matrix[t, p] += 1

    def report(self) -> dict[str, float | None]:
        return classification_report(self)


class RegressionErrorState:
    def __init__(self) -> None:
        self.count = 0
        self.sae = 0.0
        self.sse = 0.0

    def update(self, pair: tuple[Any, Any]) -> None:
        predicted, truth = pair
        if isinstance(predicted, bool) or isinstance(truth, bool):
            raise TaskMismatch("regression feedback must be real-valued")
        try:
            err = float(predicted) - float(truth)
        except (TypeError, ValueError):
            raise TaskMismatch("regression feedback must be real-valued") from None
        if not math.isfinite(err):
            raise TaskMismatch("regression feedback must be finite")
        self.count += 1
        self.sae += abs(err)
        self.sse += err * err

    def report(self) -> dict[str, float | None]:
        if self.count == 0:
            raise EmptyState("no feedback ingested")
        return {"mae": self.sae / self.count, "rmse": math.sqrt(self.sse / self.count)}


def _as_label(value: Any, n_classes: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer, float)):
        raise TaskMismatch(f"classification label must be an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise TaskMismatch(f"classification label must be an integer, got {value!r}")
        value = int(value)
    if not 0 <= value < n_classes:
        raise LabelOutOfRange(f"label {value} outside [0, {n_classes})")
    return int(value)


def classification_report(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Accuracy, per-class precision/recall/F1 and macro-F1.

    Classes whose precision or recall is 0/0 are reported as None and left out
    of the macro average.
    """
    m = cm.matrix
    total = int(m.sum())
    if total == 0:
        raise EmptyState("no feedback ingested")
    out: dict[str, float | None] = {"accuracy": int(np.trace(m)) / total}
    f1s = []
    for k in range(cm.n_classes):
        tp = int(m[k, k])
        predicted = int(m[:, k].sum())
        actual = int(m[k, :].sum())
        precision = tp / predicted if predicted else None
        recall = tp / actual if actual else None
        if precision is None or recall is None:
            f1 = None
        elif precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out[f"precision_{k}"] = precision
        out[f"recall_{k}"] = recall
        out[f"f1_{k}"] = f1
        if f1 is not None:
            f1s.append(f1)
    out["macro_f1"] = sum(f1s) / len(f1s) if f1s else None
    return out


@dataclass(frozen=True)
class AlertRule:
    metric: str
    comparator: str
    threshold: float
    min_count: int = 1
    name: str | None = None

    def __post_init__(self) -> None:
        if self.comparator not in ("<", ">"):
            raise ValueError(f"comparator must be '<' or '>', got {self.comparator!r}")

    @property
    def rule_id(self) -> str:
        return self.name or f"{self.metric}{self.comparator}{self.threshold}"

    def violated(self, value: float) -> bool:
        op: Callable[[float, float], bool] = operator.lt if self.comparator == "<" else operator.gt
        return op(value, self.threshold)


@dataclass(frozen=True)
class MetricSnapshot:
    window: int
    values: dict[str, float | None]
    count: int


@dataclass(frozen=True)
class Alert:
    rule: str
    metric: str
    value: float
    threshold: float
    window: int
    timestamp: int

    def to_dict(self) -> dict[str, Any]:
        return {"rule": self.rule, "metric": self.metric, "value": self.value,
                "threshold": self.threshold, "window": self.window, "timestamp": self.timestamp}


def evaluate_alert_rules(snapshot: MetricSnapshot, rules: list[AlertRule], timestamp: int = 0) -> list[Alert]:
    alerts = []
    for rule in rules:
        if rule.metric not in snapshot.values:
            raise UnknownMetricName(rule.metric)
        if snapshot.count < rule.min_count:
            continue
        value = snapshot.values[rule.metric]
        if value is None:
            continue
        if rule.violated(value):
            alerts.append(Alert(rule.rule_id, rule.metric, value, rule.threshold, snapshot.window, timestamp))
    return alerts


@dataclass
class PerformanceTracker:
    """Lifetime and windowed performance state fed by feedback pairs.

    Alerts are edge-triggered: each rule fires at most once per window.
    """

    task: str = "classification"
    n_classes: int = 2
    scope: WindowScope = field(default_factory=WindowScope.lifetime)
    rules: list[AlertRule] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        self.lifetime = self._new_state()
        self.windowed: WindowedSketch = WindowedSketch(self._new_state, self.scope)
        self._fired: set[tuple[str, int]] = set()
        known = self.metric_names()
        for rule in self.rules:
            if rule.metric not in known:
                raise UnknownMetricName(rule.metric)

    def metric_names(self) -> set[str]:
        if self.task == "regression":
            return {"mae", "rmse"}
        names = {"accuracy", "macro_f1"}
        for k in range(self.n_classes):
            names |= {f"precision_{k}", f"recall_{k}", f"f1_{k}"}
        return names

    def _new_state(self) -> ConfusionMatrix | RegressionErrorState:
        return ConfusionMatrix(self.n_classes) if self.task == "classification" else RegressionErrorState()

    def _check(self, predicted: Any, truth: Any) -> None:
        # validate before touching any state so a bad pair leaves no trace
        if self.task == "classification":
            _as_label(predicted, self.n_classes)
            _as_label(truth, self.n_classes)
        else:
            RegressionErrorState().update((predicted, truth))

    def ingest(self, predicted: Any, truth: Any, timestamp: int = 0) -> list[Alert]:
        self._check(predicted, truth)
        self.windowed.observe(timestamp, (predicted, truth))
        self.lifetime.update((predicted, truth))
        snap = self.snapshot()
        alerts = []
        for alert in evaluate_alert_rules(snap, self.rules, timestamp):
            key = (alert.rule, alert.window)
            if key not in self._fired:
                self._fired.add(key)
                alerts.append(alert)
        return alerts

    def snapshot(self, scope: str = "window") -> MetricSnapshot:
        if scope == "lifetime":
            state, window = self.lifetime, 0
        else:
            state, window = self.windowed.current, self.windowed.sequence
        values = state.report() if state.count else {}
        return MetricSnapshot(window, values, state.count)

    def last_completed(self) -> MetricSnapshot | None:
        state = self.windowed.last_completed
        if state is None:
            return None
        return MetricSnapshot(self.windowed.sequence - 1, state.report() if state.count else {}, state.count)


def ingest_feedback(state: PerformanceTracker, predicted: Any, truth: Any, timestamp: int = 0) -> PerformanceTracker:
    state.ingest(predicted, truth, timestamp)
    return state
