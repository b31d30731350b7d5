from __future__ import annotations

import threading
from collections import OrderedDict

from ..core import PredictionEvent


class RequestLedger:
    """Bounded request_id -> PredictionEvent map, evicting the oldest insert first.

    Lets delayed feedback that only carries a request id be joined to the
    logged prediction.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: OrderedDict[str, PredictionEvent] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, event: PredictionEvent) -> None:
        with self._lock:
            self._items[event.request_id] = event
            while len(self._items) > self.capacity:
                self._items.popitem(last=False)

    def get(self, request_id: str) -> PredictionEvent | None:
        with self._lock:
            return self._items.get(request_id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)
