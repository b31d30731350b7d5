"""Model monitoring sidecar: payload logging, streaming stats, outlier and drift detection, explanations."""

from .core import (
    Feature,
    FeatureSchema,
    FeedbackEvent,
    PredictionEvent,
    Record,
    ReferenceSet,
    ValidationError,
    load_reference_set,
    validate_record,
)

__version__ = "0.1.0"

__all__ = [
    "Feature",
    "FeatureSchema",
    "FeedbackEvent",
    "PredictionEvent",
    "Record",
    "ReferenceSet",
    "ValidationError",
    "load_reference_set",
    "validate_record",
]
