"""Feature schemas, records, logged events and reference data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

Value = Union[float, str]

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


class ValidationError(ValueError):
    """A raw record failed schema validation.

    ``violations`` holds one ``(kind, feature, message)`` triple per problem so
    that callers can report every issue at once.
    """

    def __init__(self, violations: list[tuple[str, str, str]], row: int | None = None):
        self.violations = violations
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + "; ".join(f"{kind} ({feat}): {msg}" for kind, feat, msg in violations))

    @property
    def kinds(self) -> set[str]:
        return {kind for kind, _, _ in self.violations}


class WrongArity(ValidationError):
    pass


class HeaderMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = NUMERICAL
    categories: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise ValueError(f"categorical feature {self.name!r} needs at least one category")
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))

    @property
    def is_numerical(self) -> bool:
        return self.kind == NUMERICAL


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")

    @classmethod
    def from_dicts(cls, items: Iterable[dict[str, Any]]) -> FeatureSchema:
        return cls(tuple(Feature(d["name"], d.get("kind", NUMERICAL), d.get("categories")) for d in items))

    def to_dicts(self) -> list[dict[str, Any]]:
        out = []
        for f in self.features:
            d: dict[str, Any] = {"name": f.name, "kind": f.kind}
            if f.categories is not None:
                d["categories"] = list(f.categories)
            out.append(d)
        return out

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def __len__(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def numerical_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.is_numerical]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if not f.is_numerical]


@dataclass(frozen=True)
class Record:
    values: tuple[Value, ...]

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> Value:
        return self.values[i]

    def to_list(self) -> list[Value]:
        return list(self.values)


def validate_record(raw: Sequence[Any], schema: FeatureSchema) -> Record:
    """Parse ``raw`` against ``schema``; raises ValidationError listing every violation."""
    if len(raw) != len(schema):
        raise WrongArity([("WrongArity", "*", f"expected {len(schema)} values, got {len(raw)}")])
    violations: list[tuple[str, str, str]] = []
    values: list[Value] = []
    for feat, value in zip(schema.features, raw):
        if feat.is_numerical:
            try:
                if isinstance(value, bool):
                    raise TypeError
                x = float(value)
            except (TypeError, ValueError):
                violations.append(("NotANumber", feat.name, f"{value!r} is not numeric"))
                continue
            if not math.isfinite(x):
                violations.append(("NonFiniteNumber", feat.name, f"{value!r} is not finite"))
                continue
            values.append(x)
        else:
            token = value if isinstance(value, str) else str(value)
            if token not in feat.categories:
                violations.append(("UnknownCategory", feat.name, f"{token!r} not in {list(feat.categories)}"))
                continue
            values.append(token)
    if violations:
        raise ValidationError(violations)
    return Record(tuple(values))


def serialize_record(record: Record) -> list[Value]:
    return record.to_list()


@dataclass(frozen=True)
class PredictionEvent:
    request_id: str
    timestamp: int
    record: Record
    model_output: tuple[float, ...] = ()
    predicted_label: int | None = None

    def to_payload(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "timestamp": self.timestamp,
            "instance": self.record.to_list(),
            "model_output": list(self.model_output),
            "predicted_label": self.predicted_label,
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any], schema: FeatureSchema) -> PredictionEvent:
        return cls(
            request_id=str(payload["request_id"]),
            timestamp=int(payload["timestamp"]),
            record=validate_record(payload["instance"], schema),
            model_output=tuple(float(v) for v in payload.get("model_output") or ()),
            predicted_label=payload.get("predicted_label"),
        )


def output_to_prediction(output: Any, task: str) -> tuple[tuple[float, ...], int | None]:
    """Normalize one upstream prediction into (output vector, predicted label)."""
    if isinstance(output, (list, tuple)):
        vec = tuple(float(v) for v in output)
    else:
        vec = (float(output),)
    label = None
    if task == "classification":
        if len(vec) == 1:
            # a bare class index rather than a probability vector
            label = int(round(vec[0]))
        elif vec:
            label = int(np.argmax(vec))
    return vec, label


@dataclass(frozen=True)
class FeedbackEvent:
    predicted: float | int
    truth: float | int
    timestamp: int
    request_id: str | None = None
    record: Record | None = None

    def __post_init__(self) -> None:
        if self.request_id is None and self.record is None and self.predicted is None:
            raise ValueError("feedback needs a request_id or an inline prediction")

    def to_payload(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "instance": self.record.to_list() if self.record is not None else None,
            "predicted": self.predicted,
            "truth": self.truth,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class ReferenceSet:
    schema: FeatureSchema
    records: tuple[Record, ...]
    model_outputs: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise ValueError("reference set must be non-empty")
        if self.model_outputs is not None:
            outputs = np.asarray(self.model_outputs, dtype=float)
            if outputs.ndim != 2 or len(outputs) != len(self.records):
                raise ValueError("model_outputs must have one row per record")
            object.__setattr__(self, "model_outputs", outputs)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, i: int) -> list[Value]:
        return [r.values[i] for r in self.records]

    def numeric_column(self, i: int) -> np.ndarray:
        return np.array([r.values[i] for r in self.records], dtype=float)

    def with_outputs(self, outputs: np.ndarray) -> ReferenceSet:
        return ReferenceSet(self.schema, self.records, outputs)


def read_csv_rows(path: str | Path, schema: FeatureSchema) -> list[Record]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatch(f"{path}: empty file, expected header {schema.names}") from None
        if [h.strip() for h in header] != schema.names:
            raise HeaderMismatch(f"{path}: header {header} does not match schema {schema.names}")
        records = []
        for i, row in enumerate(reader):
            if not row:
                continue
            try:
                records.append(validate_record(row, schema))
            except ValidationError as exc:
                raise type(exc)(exc.violations, row=i) from None
    return records


def load_reference_set(path: str | Path, schema: FeatureSchema) -> ReferenceSet:
    """Load a reference CSV whose header matches the schema order."""
    return ReferenceSet(schema, tuple(read_csv_rows(path, schema)))


def _format_value(v: Value) -> str:
    # repr of a builtin float round-trips exactly; numpy scalars would print their type name
    if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, schema: FeatureSchema, records: Iterable[Record]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.names)
        for r in records:
            writer.writerow([_format_value(v) for v in r.values])


def infer_schema(path: str | Path) -> FeatureSchema:
    """Guess a schema from a CSV: all-numeric columns are numerical, the rest categorical."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        columns: list[list[str]] = [[] for _ in header]
        for row in reader:
            for col, v in zip(columns, row):
                col.append(v)
    features = []
    for name, col in zip(header, columns):
        try:
            [float(v) for v in col]
            features.append(Feature(name))
        except ValueError:
            features.append(Feature(name, CATEGORICAL, tuple(sorted(set(col)))))
    return FeatureSchema(tuple(features))
