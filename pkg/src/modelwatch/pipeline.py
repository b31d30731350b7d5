"""Analysis side of the sidecar: broker triggers feeding stats, outlier, drift and metric consumers.

The topology mirrors asynchronous payload logging::

    predictions --> stats
                --> outlier detector --outlier-verdict--> drift (covariate, label)
    feedback    --> performance
    drift / performance --alert--> alert collector, sinks

All timestamps used downstream come from the events themselves, so replaying a
stored log reproduces the live run.
"""

from __future__ import annotations

import csv
import logging
import threading
from collections import deque
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .config import ServiceConfig
from .core import FeatureSchema, PredictionEvent, Record, ReferenceSet, load_reference_set, validate_record
from .drift.detector import COVARIATE, LABEL, DriftDetector, DriftReport
from .drift.preprocess import ModelClient, PreprocessorError
from .eventing import (
    ALERTS,
    DRIFT,
    FEEDBACK,
    OUTLIERS,
    PREDICTIONS,
    AlertLogSink,
    Broker,
    Event,
    JsonlSink,
    StdoutSink,
    Trigger,
)
from .outliers import OnlineMahalanobisDetector, StaticKnnDetector
from .performance import Alert, PerformanceTracker
from .streaming import RecordSketch, WindowedSketch

logger = logging.getLogger(__name__)


class UnknownFeature(KeyError):
    pass


def load_reference(config: ServiceConfig) -> ReferenceSet:
    schema = config.feature_schema()
    path = config.resolve(config.reference)
    if path is None:
        raise FileNotFoundError("config does not name a reference CSV")
    reference = load_reference_set(path, schema)
    out_path = config.resolve(config.reference_outputs)
    if out_path is not None:
        with out_path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        reference = reference.with_outputs(np.array(rows, dtype=float))
    return reference


class StatsConsumer:
    def __init__(self, schema: FeatureSchema, config: ServiceConfig):
        bins = config.stats.histogram_bins
        self.schema = schema
        self._lock = threading.Lock()
        self.lifetime = RecordSketch(schema, bins)
        self.window = WindowedSketch(lambda: RecordSketch(schema, bins), config.stats.window.scope())

    def __call__(self, event: Event) -> None:
        pred = PredictionEvent.from_payload(event.payload, self.schema)
        with self._lock:
            self.lifetime.update((pred.record, pred.model_output))
            self.window.observe(pred.timestamp, (pred.record, pred.model_output))

    def snapshot(self, feature: str | None = None) -> dict[str, Any]:
        with self._lock:
            names = list(self.lifetime.features)
            if feature is not None and feature not in names:
                raise UnknownFeature(feature)
            last = self.window.last_completed
            out = {}
            for name in ([feature] if feature else names):
                out[name] = {
                    "lifetime": self.lifetime.features[name].to_dict(),
                    "current": _feature_dict(self.window.current, name),
                    "last_completed": _feature_dict(last, name) if last is not None else None,
                }
            return {"count": self.lifetime.count, "window": self.window.sequence, "features": out}


def _feature_dict(sketch: RecordSketch, name: str) -> dict[str, Any] | None:
    fs = sketch.features.get(name)
    return fs.to_dict() if fs is not None else None


class OutlierConsumer:
    def __init__(self, schema: FeatureSchema, reference: ReferenceSet, config: ServiceConfig, broker: Broker):
        cfg = config.outlier
        self.schema = schema
        self.broker = broker
        if cfg.detector == "knn":
            self.detector = StaticKnnDetector(reference, cfg.k, cfg.percentile)
        else:
            self.detector = OnlineMahalanobisDetector(reference, cfg.percentile, cfg.epsilon)
        self.recent: deque[dict[str, Any]] = deque(maxlen=config.gateway.recent_outliers)
        self.scored = 0
        self.flagged = 0
        self._lock = threading.Lock()

    def __call__(self, event: Event) -> None:
        pred = PredictionEvent.from_payload(event.payload, self.schema)
        verdict = self.detector.observe(pred.record, pred.request_id)
        body = verdict.to_dict()
        with self._lock:
            self.scored += 1
            self.flagged += int(verdict.is_outlier)
            self.recent.append(body)
        self.broker.publish(Event(OUTLIERS, "outlier-verdict",
                                  {**body, "prediction": event.payload}, timestamp=event.timestamp))

    def latest(self, limit: int | None = None) -> list[dict[str, Any]]:
        with self._lock:
            items = list(self.recent)
        return items[-limit:] if limit else items


class DriftConsumer:
    """Buffers live records into count-based batches and tests each completed batch."""

    def __init__(self, kind: str, detector: DriftDetector, schema: FeatureSchema, broker: Broker,
                 exclude_outliers: bool):
        self.kind = kind
        self.detector = detector
        self.schema = schema
        self.broker = broker
        self.exclude_outliers = exclude_outliers
        self.min_batch = detector.config.min_batch
        self.records: list[Record] = []
        self.outputs: list[tuple[float, ...]] = []
        self.batches = 0
        self.reports: deque[DriftReport] = deque(maxlen=1000)
        self.excluded = 0
        self._lock = threading.Lock()

    def __call__(self, event: Event) -> None:
        if event.type == "outlier-verdict":
            if self.exclude_outliers and event.payload.get("is_outlier"):
                self.excluded += 1
                return
            payload = event.payload["prediction"]
        else:
            payload = event.payload
        pred = PredictionEvent.from_payload(payload, self.schema)
        if self.kind == LABEL:
            if not pred.model_output:
                return
            self.outputs.append(pred.model_output)
        self.records.append(pred.record)
        if len(self.records) >= self.min_batch:
            self._run(pred.timestamp)

    def _run(self, timestamp: int) -> None:
        records, outputs = self.records, self.outputs
        self.records, self.outputs = [], []
        window = self.batches
        self.batches += 1
        try:
            report = self.detector.run(records, np.array(outputs) if self.kind == LABEL else None,
                                       window=window, timestamp=timestamp)
        except (PreprocessorError, ValueError) as exc:
            logger.error("drift test on %s batch %d failed: %s", self.kind, window, exc)
            return
        with self._lock:
            self.reports.append(report)
        self.broker.publish(Event(DRIFT, "drift-report", report.to_dict(), timestamp=timestamp))
        if report.drift_detected:
            if report.method == "mmd":
                value = report.p_value
            else:
                value = min(f.p_value for f in report.features)
            alert = Alert(f"drift:{self.kind}", "p_value", value, report.alpha, window, timestamp)
            self.broker.publish(Event(ALERTS, "alert", alert.to_dict(), timestamp=timestamp))

    def latest(self) -> DriftReport | None:
        with self._lock:
            return self.reports[-1] if self.reports else None


class PerformanceConsumer:
    def __init__(self, config: ServiceConfig, broker: Broker):
        self.broker = broker
        self.tracker = PerformanceTracker(config.model.task, config.model.n_classes,
                                          config.metrics.window.scope(),
                                          [r.rule() for r in config.metrics.alert_rules])
        self._lock = threading.Lock()

    def __call__(self, event: Event) -> None:
        p = event.payload
        with self._lock:
            alerts = self.tracker.ingest(p["predicted"], p["truth"], int(p.get("timestamp", event.timestamp)))
        for alert in alerts:
            self.broker.publish(Event(ALERTS, "alert", alert.to_dict(), timestamp=alert.timestamp))

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            life = self.tracker.snapshot("lifetime")
            cur = self.tracker.snapshot()
            last = self.tracker.last_completed()
        return {
            "lifetime": {"count": life.count, "values": life.values},
            "current": {"window": cur.window, "count": cur.count, "values": cur.values},
            "last_completed": None if last is None else {"window": last.window, "count": last.count,
                                                         "values": last.values},
        }


class AlertCollector:
    def __init__(self) -> None:
        self.alerts: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def __call__(self, event: Event) -> None:
        with self._lock:
            self.alerts.append(event.payload)

    def ordered(self) -> list[dict[str, Any]]:
        # triggers run concurrently, so order by event time rather than arrival
        with self._lock:
            return sorted(self.alerts, key=lambda a: (a["timestamp"], a["rule"], a["window"]))


class Monitor:
    """Composition root of the analysis path."""

    def __init__(self, config: ServiceConfig, reference: ReferenceSet, broker: Broker | None = None,
                 model_client: ModelClient | None = None):
        self.config = config
        self.schema = reference.schema
        self.reference = reference
        self.broker = broker or Broker()
        cap = config.broker.queue_capacity
        b = self.broker

        self.stats = StatsConsumer(self.schema, config)
        b.register_trigger(Trigger(self.stats, PREDICTIONS, "prediction", capacity=cap, name="stats"))

        self.outliers: OutlierConsumer | None = None
        drift_source = (PREDICTIONS, "prediction")
        if config.outlier.detector != "none":
            self.outliers = OutlierConsumer(self.schema, reference, config, b)
            b.register_trigger(Trigger(self.outliers, PREDICTIONS, "prediction", capacity=cap, name="outliers"))
            drift_source = (OUTLIERS, "outlier-verdict")
        exclude = config.outlier.exclude_from_drift and self.outliers is not None

        self.drift: dict[str, DriftConsumer] = {}
        base = config.drift.drift_config()
        if base.preprocessor != "bbsd":
            det = DriftDetector(reference, base, model_client)
            self.drift[COVARIATE] = DriftConsumer(COVARIATE, det, self.schema, b, exclude)
        if base.preprocessor == "bbsd" or config.drift.label:
            label_cfg = replace(base, preprocessor="bbsd")
            try:
                det = DriftDetector(reference, label_cfg, model_client)
            except Exception as exc:
                logger.warning("label drift disabled: %s", exc)
            else:
                self.drift[LABEL] = DriftConsumer(LABEL, det, self.schema, b, exclude)
        for kind, consumer in self.drift.items():
            b.register_trigger(Trigger(consumer, drift_source[0], drift_source[1], capacity=cap,
                                       name=f"drift-{kind}"))

        self.performance = PerformanceConsumer(config, b)
        b.register_trigger(Trigger(self.performance, FEEDBACK, "feedback", capacity=cap, name="performance"))

        self.alerts = AlertCollector()
        b.register_trigger(Trigger(self.alerts, ALERTS, "alert", capacity=cap, name="alerts"))

        sinks = config.sinks
        self.sinks: list[Any] = []
        if sinks.events_path:
            sink = JsonlSink(config.resolve(sinks.events_path))
            self.sinks.append(sink)
            b.register_trigger(Trigger(sink, predicate=lambda e: e.topic in (PREDICTIONS, FEEDBACK),
                                       capacity=config.broker.sink_capacity, name="sink:events"))
        if sinks.alerts_path:
            sink = JsonlSink(config.resolve(sinks.alerts_path))
            self.sinks.append(sink)
            b.register_trigger(Trigger(sink, ALERTS, "alert", capacity=config.broker.sink_capacity,
                                       name="sink:alerts"))
        if sinks.stdout_alerts:
            b.register_trigger(Trigger(StdoutSink(), ALERTS, "alert", name="sink:stdout"))
        else:
            b.register_trigger(Trigger(AlertLogSink(), ALERTS, "alert", name="sink:alert-log"))

    def latest_report(self, kind: str) -> DriftReport | None:
        consumer = self.drift.get(kind)
        return consumer.latest() if consumer else None

    def replay(self, events: Iterable[Event], drain_every: int | None = None) -> dict[str, Any]:
        """Publish stored source events (predictions and feedback) and wait for the analysis to settle."""
        every = drain_every or max(1, self.config.broker.queue_capacity // 2)
        replayed = skipped = 0
        for event in events:
            if event.type not in ("prediction", "feedback"):
                skipped += 1
                continue
            self.broker.publish(event)
            replayed += 1
            if replayed % every == 0:
                self.broker.drain(timeout=600)
        self.broker.drain(timeout=600)
        return self.summary(replayed, skipped)

    def summary(self, replayed: int = 0, skipped: int = 0) -> dict[str, Any]:
        reports = {kind: [r.to_dict() for r in c.reports] for kind, c in self.drift.items()}
        return {
            "events": replayed,
            "skipped": skipped,
            "windows": {
                "stats": self.stats.window.sequence,
                "metrics": self.performance.tracker.windowed.sequence,
                "drift_batches": {kind: c.batches for kind, c in self.drift.items()},
            },
            "alerts": self.alerts.ordered(),
            "drift_reports": reports,
            "performance": self.performance.snapshot(),
            "broker": self.broker.stats(),
        }

    def close(self, timeout: float = 10.0) -> dict[str, Any]:
        return self.broker.stop(drain=True, timeout=timeout)


def records_from_instances(instances: list[list[Any]], schema: FeatureSchema) -> list[Record]:
    return [validate_record(inst, schema) for inst in instances]


def read_event_log(path: str | Path) -> list[Event]:
    """Parse a JSONL event log; raises ValueError naming the first bad line (1-based)."""
    import json

    events = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(Event.from_dict(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    return events
