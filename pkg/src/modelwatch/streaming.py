"""Online accumulators for live feature statistics.

Everything here is single-writer: one thread feeds observations while readers
take ``snapshot()`` copies.
"""

from __future__ import annotations

import bisect
import copy
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Generic, Iterable, TypeVar

from .core import FeatureSchema, Record


class EmptySketch(ValueError):
    pass


class UnknownCategory(ValueError):
    pass


class ClockRegression(ValueError):
    pass


@dataclass
class MomentAccumulator:
    """Welford running mean / sum of squared deviations plus min and max."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = math.inf
    max: float = -math.inf

    def update(self, x: float) -> MomentAccumulator:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        if x < self.min:
            self.min = x
        if x > self.max:
            self.max = x
        return self

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        """Combine two shards (Chan et al. parallel update); inputs are left untouched."""
        if other.count == 0:
            return copy.copy(self)
        if self.count == 0:
            return copy.copy(other)
        n = self.count + other.count
        delta = other.mean - self.mean
        # weighted form is symmetric in (self, other)
        mean = (self.count * self.mean + other.count * other.mean) / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return MomentAccumulator(n, mean, m2, min(self.min, other.min), max(self.max, other.max))

    @property
    def variance(self) -> float | None:
        if self.count < 2:
            return None
        return self.m2 / (self.count - 1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "mean": self.mean if self.count else None,
            "variance": self.variance,
            "min": self.min if self.count else None,
            "max": self.max if self.count else None,
        }


def moment_update(acc: MomentAccumulator, x: float) -> MomentAccumulator:
    return copy.copy(acc).update(x)


def moment_merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    return a.merge(b)


@dataclass
class StreamingHistogram:
    """Bounded-bin streaming histogram (Ben-Haim & Tom-Tov).

    New points become unit bins; when more than ``max_bins`` exist, the two
    adjacent bins with the smallest centroid gap are merged.
    """

    max_bins: int = 64
    centroids: list[float] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    total: int = 0

    def __post_init__(self) -> None:
        if self.max_bins < 1:
            raise ValueError("max_bins must be positive")

    @property
    def bins(self) -> list[tuple[float, int]]:
        return list(zip(self.centroids, self.counts))

    def update(self, x: float) -> StreamingHistogram:
        self.total += 1
        i = bisect.bisect_left(self.centroids, x)
        if i < len(self.centroids) and self.centroids[i] == x:
            self.counts[i] += 1
            return self
        self.centroids.insert(i, x)
        self.counts.insert(i, 1)
        while len(self.centroids) > self.max_bins:
            self._merge_closest()
        return self

    def _merge_closest(self) -> None:
        c = self.centroids
        j = min(range(len(c) - 1), key=lambda k: c[k + 1] - c[k])
        n = self.counts[j] + self.counts[j + 1]
        c[j] = (c[j] * self.counts[j] + c[j + 1] * self.counts[j + 1]) / n
        self.counts[j] = n
        del c[j + 1]
        del self.counts[j + 1]

    def quantile(self, q: float) -> float:
        """Linear interpolation over bins expanded as point masses at their centroids."""
        if self.total == 0:
            raise EmptySketch("histogram is empty")
        if not 0.0 <= q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        rank = q * (self.total - 1)
        lo = math.floor(rank)
        frac = rank - lo
        a = self._value_at(lo)
        if frac == 0.0:
            return a
        b = self._value_at(lo + 1)
        return a + frac * (b - a)

    def _value_at(self, rank: int) -> float:
        # rank is 0-based in the expanded multiset
        seen = 0
        for c, n in zip(self.centroids, self.counts):
            seen += n
            if rank < seen:
                return c
        return self.centroids[-1]

    def to_list(self) -> list[list[float]]:
        return [[c, n] for c, n in zip(self.centroids, self.counts)]


def histogram_update(h: StreamingHistogram, x: float) -> StreamingHistogram:
    return copy.deepcopy(h).update(x)


def histogram_quantile(h: StreamingHistogram, q: float) -> float:
    return h.quantile(q)


@dataclass
class FrequencyTable:
    categories: tuple[str, ...]
    counts: dict[str, int] = field(default_factory=dict)
    total: int = 0

    def update(self, token: str) -> FrequencyTable:
        if token not in self.categories:
            raise UnknownCategory(f"{token!r} not in {list(self.categories)}")
        self.counts[token] = self.counts.get(token, 0) + 1
        self.total += 1
        return self

    def count(self, token: str) -> int:
        return self.counts.get(token, 0)

    def to_dict(self) -> dict[str, int]:
        return dict(self.counts)


def frequency_update(t: FrequencyTable, token: str) -> FrequencyTable:
    return copy.deepcopy(t).update(token)


class FeatureSketch:
    """Moments and histogram for a numerical feature, or a frequency table for a categorical one."""

    def __init__(self, categories: Iterable[str] | None = None, max_bins: int = 64):
        self.numerical = categories is None
        if self.numerical:
            self.moments = MomentAccumulator()
            self.histogram = StreamingHistogram(max_bins)
            self.frequencies = None
        else:
            self.moments = None
            self.histogram = None
            self.frequencies = FrequencyTable(tuple(categories))

    @property
    def count(self) -> int:
        return self.moments.count if self.numerical else self.frequencies.total

    def update(self, x: Any) -> None:
        if self.numerical:
            self.moments.update(float(x))
            self.histogram.update(float(x))
        else:
            self.frequencies.update(x)

    def to_dict(self) -> dict[str, Any]:
        if self.numerical:
            out = self.moments.to_dict()
            out["histogram"] = self.histogram.to_list()
            out["frequencies"] = {}
        else:
            out = {"count": self.frequencies.total, "mean": None, "variance": None, "min": None, "max": None,
                   "histogram": [], "frequencies": self.frequencies.to_dict()}
        return out


class RecordSketch:
    """One FeatureSketch per schema feature, plus optional model-output dimensions."""

    def __init__(self, schema: FeatureSchema, max_bins: int = 64):
        self.schema = schema
        self.max_bins = max_bins
        self.features: dict[str, FeatureSketch] = {
            f.name: FeatureSketch(f.categories if not f.is_numerical else None, max_bins) for f in schema.features
        }
        self.count = 0

    def update(self, item: tuple[Record, tuple[float, ...]] | Record) -> None:
        if isinstance(item, Record):
            record, outputs = item, ()
        else:
            record, outputs = item
        self.count += 1
        for f, v in zip(self.schema.features, record.values):
            self.features[f.name].update(v)
        for i, v in enumerate(outputs):
            key = f"output_{i}"
            if key not in self.features:
                self.features[key] = FeatureSketch(None, self.max_bins)
            self.features[key].update(v)

    def to_dict(self) -> dict[str, Any]:
        return {name: sk.to_dict() for name, sk in self.features.items()}


S = TypeVar("S")


@dataclass(frozen=True)
class WindowScope:
    kind: str = "lifetime"  # lifetime | count | duration
    size: int = 0
    seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("lifetime", "count", "duration"):
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.kind == "count" and self.size < 1:
            raise ValueError("count window needs size >= 1")
        if self.kind == "duration" and self.seconds <= 0:
            raise ValueError("duration window needs seconds > 0")

    @classmethod
    def lifetime(cls) -> WindowScope:
        return cls("lifetime")

    @classmethod
    def tumbling_count(cls, n: int) -> WindowScope:
        return cls("count", size=n)

    @classmethod
    def tumbling_duration(cls, seconds: float) -> WindowScope:
        return cls("duration", seconds=seconds)


CLOCK_TOLERANCE_MS = 1000


class WindowedSketch(Generic[S]):
    """Tumbling window around any sketch with an ``update`` method.

    Rotation happens on the first observation past the boundary, before it is
    inserted; idle periods do not emit empty windows.
    """

    def __init__(self, factory: Callable[[], S], scope: WindowScope | None = None):
        self.factory = factory
        self.scope = scope or WindowScope.lifetime()
        self.current: S = factory()
        self.last_completed: S | None = None
        self.sequence = 0
        self.n_in_window = 0
        self.window_start: int | None = None
        self.last_timestamp: int | None = None

    def _should_rotate(self, timestamp: int) -> bool:
        if self.scope.kind == "count":
            return self.n_in_window >= self.scope.size
        if self.scope.kind == "duration":
            return self.window_start is not None and timestamp - self.window_start >= self.scope.seconds * 1000
        return False

    def rotate(self) -> None:
        self.last_completed = self.current
        self.current = self.factory()
        self.sequence += 1
        self.n_in_window = 0
        self.window_start = None

    def observe(self, timestamp: int, x: Any) -> bool:
        """Insert ``x`` observed at ``timestamp`` (ms); returns True if a rotation happened first."""
        if self.last_timestamp is not None and timestamp < self.last_timestamp - CLOCK_TOLERANCE_MS:
            raise ClockRegression(f"timestamp {timestamp} precedes {self.last_timestamp}")
        rotated = self._should_rotate(timestamp)
        if rotated:
            self.rotate()
        if self.window_start is None:
            self.window_start = timestamp
        self.last_timestamp = max(timestamp, self.last_timestamp or timestamp)
        self.current.update(x)
        self.n_in_window += 1
        return rotated


def window_observe(w: WindowedSketch, timestamp: int, x: Any) -> WindowedSketch:
    w.observe(timestamp, x)
    return w


def quantile_rank_error(sample: Iterable[float], estimate: float, q: float) -> float:
    """Distance in probability between ``q`` and the rank of ``estimate`` in the exact sample."""
    xs = sorted(sample)
    n = len(xs)
    below = bisect.bisect_left(xs, estimate)
    at_or_below = bisect.bisect_right(xs, estimate)
    # any rank in [below, at_or_below] is consistent with estimate
    lo, hi = below / n, at_or_below / n
    if lo <= q <= hi:
        return 0.0
    return min(abs(q - lo), abs(q - hi))
