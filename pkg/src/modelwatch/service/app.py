"""FastAPI gateway: the prediction proxy plus read-only monitoring endpoints.

Only ``/v1/predict`` sits on the latency-critical path. It forwards the body
untouched and hands payload logging to a background task that runs after the
response is written.
"""

from __future__ import annotations

import json
import logging
import time
import uuid
from contextlib import asynccontextmanager
from typing import Any, Optional

import httpx
from fastapi import BackgroundTasks, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import ValidationError as PydanticValidationError

from ..config import ServiceConfig
from ..core import FeatureSchema, PredictionEvent, ReferenceSet, ValidationError, output_to_prediction, validate_record
from ..drift.detector import COVARIATE, LABEL
from ..drift.preprocess import ModelUnavailable
from ..eventing import FEEDBACK, PREDICTIONS, BrokerStopped, Event, now_ms
from ..explainer import BudgetExhausted, anchor_search
from ..performance import LabelOutOfRange, TaskMismatch, _as_label
from ..pipeline import Monitor, UnknownFeature, load_reference
from .ledger import RequestLedger
from .metrics import GatewayMetrics
from .schemas import (
    DriftReportOut,
    ExplainRequest,
    ExplanationOut,
    FeedbackAccepted,
    FeedbackRequest,
    OutlierVerdictOut,
    PredictRequest,
)
from .upstream import UpstreamModelClient, UpstreamTimeout, UpstreamUnavailable, parse_predictions

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "X-Request-ID"


def _error(status: int, detail: Any) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": detail})


def _violations(exc: ValidationError, index: int | None = None) -> list[dict[str, Any]]:
    out = []
    for kind, feature, message in exc.violations:
        item = {"error": kind, "feature": feature, "message": message}
        if index is not None:
            item["instance"] = index
        out.append(item)
    return out


def create_app(
    config: ServiceConfig,
    reference: ReferenceSet | None = None,
    transport: httpx.BaseTransport | None = None,
    explainer_transport: httpx.BaseTransport | None = None,
) -> FastAPI:
    """Build the gateway. ``transport`` lets tests stand in for the upstream model."""
    schema: FeatureSchema = config.feature_schema()
    if reference is None and config.reference is not None:
        reference = load_reference(config)
    if reference is not None and reference.schema != schema:
        raise ValueError("reference schema differs from configured features")

    upstream = UpstreamModelClient(config.upstream.url, config.upstream.timeout, transport)
    if config.explainer.upstream_url or explainer_transport is not None:
        explain_client = UpstreamModelClient(config.explainer.upstream_url or config.upstream.url,
                                             config.upstream.timeout, explainer_transport or transport)
    else:
        explain_client = upstream

    monitor: Monitor | None = None
    if config.gateway.monitoring:
        if reference is None:
            raise ValueError("monitoring needs a reference set")
        monitor = Monitor(config, reference, model_client=upstream)
    ledger = RequestLedger(config.gateway.ledger_capacity)
    task = config.model.task

    def monitor_counters() -> dict[str, float]:
        out: dict[str, float] = {"ledger_size": len(ledger)}
        if monitor is None:
            return out
        s = monitor.broker.stats()
        out.update(broker_published=s["published"], broker_delivered=s["delivered"],
                   broker_dropped=s["dropped"], broker_handler_errors=s["errors"])
        alerts = monitor.alerts.ordered()
        out["drift_alerts"] = sum(a["rule"].startswith("drift:") for a in alerts)
        out["metric_alerts"] = len(alerts) - out["drift_alerts"]
        if monitor.outliers is not None:
            out["outliers_flagged"] = monitor.outliers.flagged
            out["outliers_scored"] = monitor.outliers.scored
        return out

    metrics = GatewayMetrics(monitor_counters)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        if monitor is not None:
            monitor.close()
        await upstream.aclose()
        if explain_client is not upstream:
            await explain_client.aclose()

    app = FastAPI(title="modelwatch", lifespan=lifespan)
    app.state.config = config
    app.state.monitor = monitor
    app.state.ledger = ledger
    app.state.metrics = metrics
    app.state.reference = reference

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        metrics.validation_errors.inc()
        return _error(400, jsonable_errors(exc.errors()))

    def publish_predictions(events: list[PredictionEvent]) -> None:
        if monitor is None:
            return
        for ev in events:
            try:
                monitor.broker.publish(Event(PREDICTIONS, "prediction", ev.to_payload(), timestamp=ev.timestamp))
                metrics.events_published.inc()
            except BrokerStopped:
                metrics.publish_failures.inc()
            except Exception:
                logger.exception("payload logging failed")
                metrics.publish_failures.inc()

    @app.post("/v1/predict")
    async def predict(request: Request, background: BackgroundTasks) -> Response:
        started = time.perf_counter()
        timestamp = now_ms()
        metrics.predict_requests.inc()
        try:
            body = await request.body()
            try:
                parsed = PredictRequest.model_validate(json.loads(body))
            except (json.JSONDecodeError, UnicodeDecodeError, PydanticValidationError) as exc:
                metrics.validation_errors.inc()
                metrics.predict_errors.inc()
                return _error(400, f"malformed request body: {exc}")
            records, problems = [], []
            for i, inst in enumerate(parsed.instances):
                try:
                    records.append(validate_record(inst, schema))
                except ValidationError as exc:
                    problems += _violations(exc, i)
            if problems:
                metrics.validation_errors.inc()
                metrics.predict_errors.inc()
                return _error(400, problems)
            try:
                resp = await upstream.forward(body, request.headers.get("content-type", "application/json"))
            except UpstreamTimeout as exc:
                metrics.upstream_errors.inc()
                metrics.predict_errors.inc()
                return _error(504, f"upstream timeout: {exc}")
            except UpstreamUnavailable as exc:
                metrics.upstream_errors.inc()
                metrics.predict_errors.inc()
                return _error(502, f"upstream unavailable: {exc}")
            request_id = uuid.uuid4().hex
            headers = {REQUEST_ID_HEADER: request_id}
            media_type = resp.headers.get("content-type", "application/json")
            if resp.status_code >= 300:
                metrics.upstream_errors.inc()
                metrics.predict_errors.inc()
                return Response(resp.content, status_code=resp.status_code, media_type=media_type, headers=headers)
            try:
                outputs = parse_predictions(resp.content)
                if len(outputs) != len(records):
                    raise ValueError("prediction count differs from instance count")
            except ValueError:
                outputs = [None] * len(records)
            events = []
            for i, (record, out) in enumerate(zip(records, outputs)):
                vec, label = output_to_prediction(out, task) if out is not None else ((), None)
                rid = request_id if len(records) == 1 else f"{request_id}:{i}"
                events.append(PredictionEvent(rid, timestamp, record, vec, label))
            for ev in events:
                ledger.put(ev)
            background.add_task(publish_predictions, events)
            return Response(resp.content, status_code=resp.status_code, media_type=media_type, headers=headers)
        finally:
            metrics.predict_latency.observe(time.perf_counter() - started)

    @app.post("/v1/feedback", status_code=202, response_model=FeedbackAccepted)
    async def feedback(body: FeedbackRequest) -> Any:
        record = None
        predicted = body.predicted
        if body.request_id is not None:
            logged = ledger.get(body.request_id)
            if logged is not None:
                record = logged.record
                if task == "classification":
                    predicted = logged.predicted_label
                else:
                    predicted = logged.model_output[0] if logged.model_output else None
            elif predicted is None:
                return _error(404, f"unknown request_id {body.request_id!r}")
        if body.instance is not None and record is None:
            try:
                record = validate_record(body.instance, schema)
            except ValidationError as exc:
                return _error(400, _violations(exc))
        if predicted is None:
            return _error(400, "feedback needs a request_id of a logged prediction or an inline 'predicted'")
        try:
            if task == "classification":
                _as_label(predicted, config.model.n_classes)
                _as_label(body.truth, config.model.n_classes)
        except (LabelOutOfRange, TaskMismatch) as exc:
            return _error(400, str(exc))
        metrics.feedback_requests.inc()
        if monitor is not None:
            payload = {
                "request_id": body.request_id,
                "instance": record.to_list() if record is not None else None,
                "predicted": predicted,
                "truth": body.truth,
                "timestamp": now_ms(),
            }
            try:
                monitor.broker.publish(Event(FEEDBACK, "feedback", payload, timestamp=payload["timestamp"]))
            except BrokerStopped:
                return _error(503, "monitoring is shutting down")
        return FeedbackAccepted(request_id=body.request_id)

    def require_monitor() -> Monitor:
        if monitor is None:
            raise _MonitoringDisabled()
        return monitor

    @app.exception_handler(_MonitoringDisabled)
    async def _disabled(request: Request, exc: _MonitoringDisabled) -> JSONResponse:
        return _error(503, "monitoring is disabled")

    @app.get("/v1/stats")
    def stats(feature: Optional[str] = None, window: Optional[str] = Query(None)) -> Any:
        mon = require_monitor()
        try:
            snap = mon.stats.snapshot(feature)
        except UnknownFeature:
            return _error(404, f"unknown feature {feature!r}")
        if window is not None:
            if window not in ("lifetime", "current", "last_completed"):
                return _error(400, "window must be lifetime, current or last_completed")
            snap["features"] = {k: {window: v[window]} for k, v in snap["features"].items()}
        return snap

    @app.get("/v1/drift", response_model=DriftReportOut, responses={204: {"description": "no completed batch"}})
    def drift(kind: str = Query(COVARIATE)) -> Any:
        if kind not in (COVARIATE, LABEL):
            return _error(400, "kind must be covariate or label")
        report = require_monitor().latest_report(kind)
        if report is None:
            return Response(status_code=204)
        return report.to_dict()

    @app.get("/v1/outliers/latest", response_model=list[OutlierVerdictOut])
    def outliers(limit: int = Query(20, ge=1)) -> Any:
        mon = require_monitor()
        return mon.outliers.latest(limit) if mon.outliers is not None else []

    @app.get("/v1/performance")
    def performance() -> Any:
        return require_monitor().performance.snapshot()

    @app.get("/v1/alerts")
    def alerts() -> Any:
        return require_monitor().alerts.ordered()

    @app.post("/v1/explain", response_model=ExplanationOut)
    def explain(body: ExplainRequest) -> Any:
        metrics.explain_requests.inc()
        try:
            instance = validate_record(body.instance, schema)
        except ValidationError as exc:
            return _error(400, _violations(exc))
        if reference is None:
            return _error(503, "explanations need a reference set")
        try:
            exp = anchor_search(instance, explain_client, reference, config.explainer.anchor_config())
        except BudgetExhausted as exc:
            return JSONResponse(status_code=422, content={**exc.partial.to_dict(), "partial": True,
                                                          "detail": "explanation failed: query budget exhausted"})
        except ModelUnavailable as exc:
            return _error(502, f"upstream unavailable: {exc}")
        return {**exp.to_dict(), "partial": False}

    @app.get("/healthz")
    def healthz() -> dict[str, Any]:
        return {"status": "ok", "monitoring": monitor is not None}

    @app.get("/metrics")
    def prometheus() -> Response:
        return Response(metrics.render(), media_type="text/plain; version=0.0.4; charset=utf-8")

    return app


class _MonitoringDisabled(Exception):
    pass


def jsonable_errors(errors: Any) -> list[dict[str, Any]]:
    out = []
    for e in errors:
        out.append({"loc": list(e.get("loc", ())), "msg": str(e.get("msg")), "type": e.get("type")})
    return out


def create_app_from_env() -> FastAPI:
    """Entry point for ``uvicorn --factory``; reads MODELWATCH_CONFIG."""
    from ..config import load_config

    return create_app(load_config())
