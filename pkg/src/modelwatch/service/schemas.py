"""Request and response bodies of the gateway API."""

from __future__ import annotations

from typing import Any, List, Optional, Union

from pydantic import BaseModel, Field

Scalar = Union[float, int, str]


class PredictRequest(BaseModel):
    instances: List[List[Scalar]] = Field(..., min_length=1)


class FeedbackRequest(BaseModel):
    request_id: Optional[str] = None
    instance: Optional[List[Scalar]] = None
    predicted: Optional[Union[int, float]] = None
    truth: Union[int, float]


class FeedbackAccepted(BaseModel):
    status: str = "accepted"
    request_id: Optional[str] = None


class ExplainRequest(BaseModel):
    instance: List[Scalar]


class Condition(BaseModel):
    op: str
    lower: Optional[float] = None
    upper: Optional[float] = None
    value: Optional[str] = None


class PredicateOut(BaseModel):
    feature: str
    condition: Condition


class ExplanationOut(BaseModel):
    predicates: List[PredicateOut]
    anchor: List[str]
    precision: float
    coverage: float
    predicted_class: int
    queries_used: int
    converged: bool
    n_samples: int
    partial: bool = False


class OutlierVerdictOut(BaseModel):
    request_id: Optional[str]
    detector: str
    score: float
    threshold: float
    is_outlier: bool


class FeatureTestOut(BaseModel):
    name: str
    test: str
    statistic: float
    p_value: float
    reject: bool


class DriftReportOut(BaseModel):
    kind: str
    method: str
    correction: str
    alpha: float
    drift_detected: bool
    n: int
    m: int
    window: int
    timestamp: int
    features: List[FeatureTestOut] = []
    mmd2: Optional[float] = None
    p_value: Optional[float] = None
    bandwidth: Optional[float] = None


class ErrorOut(BaseModel):
    detail: Any
