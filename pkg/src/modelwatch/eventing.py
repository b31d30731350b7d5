"""In-process event broker with filtered triggers.

Publishing only enqueues: every trigger owns a bounded queue and a worker
thread, so a slow consumer can never hold up the publisher. When a queue is
full the oldest pending event is dropped and counted.
"""

from __future__ import annotations

import itertools
import json
import logging
import sys
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, TextIO

logger = logging.getLogger(__name__)

PREDICTIONS = "predictions"
FEEDBACK = "feedback"
OUTLIERS = "outliers"
DRIFT = "drift"
ALERTS = "alerts"


class BrokerStopped(RuntimeError):
    pass


class DrainTimeout(TimeoutError):
    pass


class SinkIoError(OSError):
    pass


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class Event:
    topic: str
    type: str
    payload: dict[str, Any]
    timestamp: int = field(default_factory=now_ms)
    id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "topic": self.topic, "type": self.type,
                "timestamp": self.timestamp, "payload": self.payload}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Event:
        missing = {"id", "topic", "type", "timestamp", "payload"} - set(d)
        if missing:
            raise ValueError(f"event is missing fields {sorted(missing)}")
        if not isinstance(d["payload"], dict):
            raise ValueError("event payload must be an object")
        return cls(str(d["topic"]), str(d["type"]), d["payload"], int(d["timestamp"]), str(d["id"]))


Handler = Callable[[Event], None]


@dataclass
class Trigger:
    handler: Handler
    topic: str | None = None
    type: str | None = None
    predicate: Callable[[Event], bool] | None = None
    capacity: int = 1000
    name: str | None = None

    def matches(self, event: Event) -> bool:
        if self.topic is not None and event.topic != self.topic:
            return False
        if self.type is not None and event.type != self.type:
            return False
        return self.predicate is None or self.predicate(event)


class _Runner:
    def __init__(self, trigger_id: str, trigger: Trigger):
        if trigger.capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.id = trigger_id
        self.trigger = trigger
        self.queue: deque[Event] = deque()
        self.cond = threading.Condition()
        self.running = True
        self.busy = False
        self.matched = 0
        self.delivered = 0
        self.dropped = 0
        self.errors = 0
        self.thread = threading.Thread(target=self._loop, name=f"trigger-{trigger.name or trigger_id}", daemon=True)
        self.thread.start()

    def offer(self, event: Event) -> None:
        with self.cond:
            self.matched += 1
            if len(self.queue) >= self.trigger.capacity:
                self.queue.popleft()
                self.dropped += 1
            self.queue.append(event)
            self.cond.notify_all()

    def _loop(self) -> None:
        while True:
            with self.cond:
                while not self.queue and self.running:
                    self.cond.wait()
                if not self.queue:
                    return
                event = self.queue.popleft()
                self.busy = True
            try:
                self.trigger.handler(event)
            except Exception:
                logger.exception("handler %s failed on event %s", self.trigger.name or self.id, event.id)
                with self.cond:
                    self.errors += 1
            with self.cond:
                self.delivered += 1
                self.busy = False
                self.cond.notify_all()

    def idle(self) -> bool:
        return not self.queue and not self.busy

    def wait_idle(self, deadline: float) -> bool:
        with self.cond:
            while not self.idle():
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self.cond.wait(remaining)
            return True

    def stop(self) -> None:
        with self.cond:
            self.running = False
            self.cond.notify_all()

    def stats(self) -> dict[str, int]:
        with self.cond:
            return {"matched": self.matched, "delivered": self.delivered,
                    "dropped": self.dropped, "errors": self.errors, "pending": len(self.queue)}


class Broker:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._runners: dict[str, _Runner] = {}
        self._ids = itertools.count(1)
        self._running = True
        self.published = 0

    @property
    def running(self) -> bool:
        return self._running

    def publish(self, event: Event) -> str:
        """Enqueue ``event`` for every matching trigger and return its id."""
        with self._lock:
            if not self._running:
                raise BrokerStopped("broker is stopped")
            self.published += 1
            runners = list(self._runners.values())
        for runner in runners:
            if runner.trigger.matches(event):
                runner.offer(event)
        return event.id

    def register_trigger(self, trigger: Trigger) -> str:
        with self._lock:
            if not self._running:
                raise BrokerStopped("broker is stopped")
            trigger_id = f"t{next(self._ids)}"
            self._runners[trigger_id] = _Runner(trigger_id, trigger)
        return trigger_id

    def subscribe(self, handler: Handler, *, topic: str | None = None, type: str | None = None,
                  capacity: int = 1000, name: str | None = None) -> str:
        return self.register_trigger(Trigger(handler, topic, type, capacity=capacity, name=name))

    def stats(self) -> dict[str, Any]:
        with self._lock:
            runners = dict(self._runners)
            published = self.published
        per = {tid: r.stats() for tid, r in runners.items()}
        return {
            "published": published,
            "delivered": sum(s["delivered"] for s in per.values()),
            "dropped": sum(s["dropped"] for s in per.values()),
            "errors": sum(s["errors"] for s in per.values()),
            "triggers": {tid: {**s, "name": runners[tid].trigger.name} for tid, s in per.items()},
        }

    def drain(self, timeout: float = 10.0) -> dict[str, Any]:
        """Block until every queue is empty and every handler idle.

        Handlers may publish further events, so passes repeat until one
        completes with no new publishes.
        """
        deadline = time.monotonic() + timeout
        while True:
            with self._lock:
                before = self.published
                runners = list(self._runners.values())
            for r in runners:
                if not r.wait_idle(deadline):
                    raise DrainTimeout(f"trigger {r.trigger.name or r.id} still busy after {timeout}s")
            with self._lock:
                settled = self.published == before
            if settled and all(r.idle() for r in runners):
                return self.stats()

    def stop(self, drain: bool = True, timeout: float = 10.0) -> dict[str, Any]:
        stats = None
        if drain and self._running:
            try:
                stats = self.drain(timeout)
            except DrainTimeout:
                logger.warning("broker stopped before queues drained")
        with self._lock:
            self._running = False
            runners = list(self._runners.values())
        for r in runners:
            r.stop()
        for r in runners:
            r.thread.join(timeout=1.0)
            close = getattr(r.trigger.handler, "close", None)
            if callable(close):
                close()
        return stats or self.stats()


def publish(broker: Broker, event: Event) -> str:
    return broker.publish(event)


def register_trigger(broker: Broker, trigger: Trigger) -> str:
    return broker.register_trigger(trigger)


def drain(broker: Broker, timeout: float = 10.0) -> dict[str, Any]:
    return broker.drain(timeout)


class JsonlSink:
    """Appends one JSON document per event; I/O failures are counted, never raised."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.errors = 0
        self.written = 0
        self._fh: TextIO | None = None
        self._lock = threading.Lock()

    def __call__(self, event: Event) -> None:
        line = event.to_json() + "\n"
        with self._lock:
            try:
                if self._fh is None:
                    self._fh = self.path.open("a", encoding="utf-8")
                self._fh.write(line)
                self._fh.flush()
                self.written += 1
            except OSError as exc:
                self.errors += 1
                logger.error("%s", SinkIoError(f"cannot write {self.path}: {exc}"))

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class AlertLogSink:
    def __init__(self, log: logging.Logger | None = None):
        self.log = log or logging.getLogger("modelwatch.alerts")
        self.errors = 0

    def __call__(self, event: Event) -> None:
        self.log.warning("alert %s", json.dumps(event.payload, sort_keys=True))


class StdoutSink:
    def __init__(self, stream: TextIO | None = None):
        self.stream = stream
        self.errors = 0

    def __call__(self, event: Event) -> None:
        try:
            print(event.to_json(), file=self.stream or sys.stdout, flush=True)
        except OSError:
            self.errors += 1


def chain_sink(broker: Broker, sink: Handler, *, topic: str | None = None, type: str | None = None,
               capacity: int = 10_000) -> str:
    return broker.register_trigger(Trigger(sink, topic, type, capacity=capacity,
                                           name=f"sink:{sink.__class__.__name__}"))
