"""Prometheus exposition of the monitor's own health."""

from __future__ import annotations

from typing import Callable, Iterator

from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest
from prometheus_client.core import CounterMetricFamily, GaugeMetricFamily

LATENCY_BUCKETS = (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0)


class _MonitorCollector:
    def __init__(self, source: Callable[[], dict[str, float]]):
        self.source = source

    def collect(self) -> Iterator:
        values = self.source()
        for name, help_text in (
            ("broker_published", "Events published to the broker."),
            ("broker_delivered", "Events handed to trigger handlers."),
            ("broker_dropped", "Events dropped by full trigger queues."),
            ("broker_handler_errors", "Trigger handler failures."),
            ("drift_alerts", "Drift alerts raised."),
            ("metric_alerts", "Performance metric alerts raised."),
            ("outliers_flagged", "Instances flagged as outliers."),
            ("outliers_scored", "Instances scored by the outlier detector."),
        ):
            fam = CounterMetricFamily(f"modelwatch_{name}", help_text)
            fam.add_metric([], values.get(name, 0))
            yield fam
        ledger = GaugeMetricFamily("modelwatch_ledger_size", "Predictions retained for feedback joins.")
        ledger.add_metric([], values.get("ledger_size", 0))
        yield ledger


class GatewayMetrics:
    def __init__(self, source: Callable[[], dict[str, float]]):
        self.registry = CollectorRegistry()
        r = self.registry
        self.predict_requests = Counter("modelwatch_predict_requests", "Prediction requests.", registry=r)
        self.predict_errors = Counter("modelwatch_predict_errors", "Prediction requests that failed.", registry=r)
        self.upstream_errors = Counter("modelwatch_upstream_errors", "Upstream failures and timeouts.", registry=r)
        self.validation_errors = Counter("modelwatch_validation_errors", "Rejected request bodies.", registry=r)
        self.feedback_requests = Counter("modelwatch_feedback_requests", "Feedback requests accepted.", registry=r)
        self.explain_requests = Counter("modelwatch_explain_requests", "Explanation requests.", registry=r)
        self.events_published = Counter("modelwatch_prediction_events", "Prediction events logged.", registry=r)
        self.publish_failures = Counter("modelwatch_publish_failures", "Payload logging failures.", registry=r)
        self.predict_latency = Histogram("modelwatch_predict_latency_seconds", "Gateway time spent in /v1/predict.",
                                         buckets=LATENCY_BUCKETS, registry=r)
        r.register(_MonitorCollector(source))

    def render(self) -> bytes:
        return generate_latest(self.registry)
