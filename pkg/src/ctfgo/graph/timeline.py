"""Time-centric state timeline and measurement routing.

State timestamps are fixed a priori as ``t0 + k * spacing``; measurements
never create states. Each measurement is routed against the current
timeline into one of four outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_SPACING = 0.1
DEFAULT_T_SYNC = 0.01
TIME_EPS = 1e-9


class NotInitialized(RuntimeError):
    pass


class RoutingKind(str, Enum):
    SYNCHRONIZED = "synchronized"
    INTERPOLATED = "interpolated"
    DROPPED = "dropped"
    CACHED = "cached"


@dataclass(frozen=True)
class RoutingDecision:
    kind: RoutingKind
    anchor_ids: tuple = ()
    tau: float = 0.0
    t: float = 0.0


class StateTimeline:
    """Ordered ``(state_id, timestamp)`` pairs with fixed nominal spacing.

    Ids grow by one per state and timestamps are a pure function of the
    start time, spacing and id, independent of measurement arrival.
    States can be retired from the front (marginalization).
    """

    def __init__(self, t0: float, spacing: float = DEFAULT_SPACING):
        if not spacing > 0.0:
            raise ValueError("state spacing must be positive")
        self.t0 = float(t0)
        self.spacing = float(spacing)
        self._first = 0
        self._next = 0

    def __len__(self) -> int:
        return self._next - self._first

    def time_of(self, state_id: int) -> float:
        return self.t0 + state_id * self.spacing

    @property
    def ids(self) -> list[int]:
        return list(range(self._first, self._next))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self._first, self._next) * self.spacing

    @property
    def oldest_id(self) -> int:
        self._require()
        return self._first

    @property
    def newest_id(self) -> int:
        self._require()
        return self._next - 1

    @property
    def oldest_time(self) -> float:
        return self.time_of(self.oldest_id)

    @property
    def newest_time(self) -> float:
        return self.time_of(self.newest_id)

    def _require(self) -> None:
        if self._next == self._first:
            raise NotInitialized("timeline has no states")

    def extend(self, n: int = 1) -> list[tuple[int, float]]:
        """Append ``n`` states; returns the new ``(id, timestamp)`` pairs."""
        if n < 0:
            raise ValueError("cannot extend by a negative count")
        new = [(k, self.time_of(k)) for k in range(self._next, self._next + n)]
        self._next += n
        return new

    def ids_until(self, t: float) -> int:
        """Number of additional states whose timestamps are <= ``t``."""
        last = int(np.floor((t - self.t0) / self.spacing + TIME_EPS))
        return max(0, last + 1 - self._next)

    def retire_before(self, t: float) -> list[int]:
        """Drop states with timestamps strictly before ``t`` (keeping at least one)."""
        removed = []
        while self._next - self._first > 1 and self.time_of(self._first) < t - TIME_EPS:
            removed.append(self._first)
            self._first += 1
        return removed

    def route(self, t_meas_raw: float, t_d: float = 0.0, t_sync: float = DEFAULT_T_SYNC) -> RoutingDecision:
        return route_measurement(t_meas_raw, t_d, self, t_sync)


def route_measurement(t_meas_raw: float, t_d: float, timeline: StateTimeline, t_sync: float = DEFAULT_T_SYNC) -> RoutingDecision:
    """Classify a measurement against the timeline after delay correction."""
    t = float(t_meas_raw) - float(t_d)
    if len(timeline) == 0:
        return RoutingDecision(RoutingKind.CACHED, (), 0.0, t)
    t_old, t_new = timeline.oldest_time, timeline.newest_time
    if t < t_old - TIME_EPS:
        return RoutingDecision(RoutingKind.DROPPED, (), 0.0, t)
    if t > t_new + TIME_EPS:
        return RoutingDecision(RoutingKind.CACHED, (), 0.0, t)
    k = int(np.floor((t - timeline.t0) / timeline.spacing + TIME_EPS))
    k = min(max(k, timeline.oldest_id), timeline.newest_id)
    tau = t - timeline.time_of(k)
    if abs(tau) <= t_sync:
        return RoutingDecision(RoutingKind.SYNCHRONIZED, (k,), tau, t)
    if k + 1 <= timeline.newest_id and timeline.spacing - tau <= t_sync:
        return RoutingDecision(RoutingKind.SYNCHRONIZED, (k + 1,), tau - timeline.spacing, t)
    return RoutingDecision(RoutingKind.INTERPOLATED, (k, k + 1), tau, t)
