"""Thread-safe measurement ingestion with per-sensor ordering."""

from __future__ import annotations

import heapq
import itertools
import threading


class IngestQueue:
    """Producers push ``(sensor, stamp, payload)``; a consumer drains in stamp order.

    Items are released in ``(stamp, sensor, sequence)`` order, so measurements of one
    sensor keep their arrival order when stamps tie.
    """

    def __init__(self):
        self._heap = []
        self._lock = threading.Lock()
        self._seq = itertools.count()
        self._closed = threading.Event()
        self._ready = threading.Condition(self._lock)

    def put(self, sensor: str, stamp: float, payload) -> None:
        with self._ready:
            heapq.heappush(self._heap, (float(stamp), sensor, next(self._seq), payload))
            self._ready.notify_all()

    def drain(self, until: float | None = None) -> list:
        """Remove and return all items with ``stamp <= until`` (all items when ``None``)."""
        out = []
        with self._lock:
            while self._heap and (until is None or self._heap[0][0] <= until):
                stamp, sensor, _, payload = heapq.heappop(self._heap)
                out.append((sensor, stamp, payload))
        return out

    def wait(self, timeout: float | None = None) -> bool:
        with self._ready:
            if self._heap:
                return True
            return self._ready.wait(timeout)

    def close(self) -> None:
        self._closed.set()
        with self._ready:
            self._ready.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def __len__(self) -> int:
        with self._lock:
            return len(self._heap)
