import json

import httpx
import numpy as np
import pytest

from modelwatch.core import Feature, FeatureSchema, Record, ReferenceSet


def numeric_schema(d: int) -> FeatureSchema:
    return FeatureSchema(tuple(Feature(f"x{i}") for i in range(d)))


def reference_from_array(a: np.ndarray, outputs: np.ndarray | None = None) -> ReferenceSet:
    schema = numeric_schema(a.shape[1])
    return ReferenceSet(schema, [Record(tuple(float(v) for v in row)) for row in a], outputs)


def records_from_array(a: np.ndarray) -> list[Record]:
    return [Record(tuple(float(v) for v in row)) for row in a]


class RuleModel:
    """f(x) = 1 iff x0 > 0.5, returned as one-hot probabilities."""

    def __init__(self):
        self.calls = 0

    def predict(self, instances):
        self.calls += len(instances)
        x0 = np.asarray([float(r[0]) for r in instances])
        hit = (x0 > 0.5).astype(float)
        return np.column_stack([1 - hit, hit])


def rule_transport() -> httpx.MockTransport:
    model = RuleModel()

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        return httpx.Response(200, json={"predictions": model.predict(body["instances"]).tolist()})

    return httpx.MockTransport(handler)


@pytest.fixture
def mixed_schema() -> FeatureSchema:
    return FeatureSchema((Feature("age"), Feature("color", "categorical", ("red", "green", "blue")), Feature("score")))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def assert_conserved(broker) -> None:
    """Per trigger, every matched event was either delivered or dropped."""
    stats = broker.drain()
    for tid, s in stats["triggers"].items():
        assert s["pending"] == 0, tid
        assert s["delivered"] + s["dropped"] == s["matched"], (tid, s)


# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion gate")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, [title, True, []])
    if call.excinfo is not None:
        entry[1] = False
        entry[2].append(str(call.excinfo.value).splitlines()[0][:200] if str(call.excinfo.value) else call.excinfo.typename)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, reasons = _criteria[number]
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if reasons:
            line += f"  ({reasons[0]})"
        terminalreporter.write_line(line)
