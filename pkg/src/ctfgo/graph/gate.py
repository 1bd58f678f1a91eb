"""Near-zero-velocity gate: defer graph extension while the vehicle stands still."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

ZERO_SPEED_THRESHOLD = 0.05
ZERO_SPEED_WINDOW = 0.5


@dataclass
class ZeroVelocityGate:
    """Majority vote over speed sources, each reporting speed magnitudes over a time window.

    A source votes "stationary" when every sample in the last ``window``
    seconds is below ``threshold``. The gate reports stationary only when a
    strict majority of the sources with data agree; with no data it reports
    moving so that the graph keeps growing.
    """

    threshold: float = ZERO_SPEED_THRESHOLD
    window: float = ZERO_SPEED_WINDOW
    _samples: dict = field(default_factory=dict)

    def add(self, source: str, t: float, speed: float) -> None:
        q = self._samples.setdefault(source, deque())
        q.append((float(t), abs(float(speed))))
        while q and q[0][0] < t - self.window:
            q.popleft()

    def votes(self, t: float) -> dict:
        out = {}
        for source, q in self._samples.items():
            recent = [v for ts, v in q if t - self.window <= ts <= t]
            if recent:
                out[source] = max(recent) < self.threshold
        return out

    def stationary(self, t: float) -> bool:
        v = self.votes(t)
        return bool(v) and 2 * sum(v.values()) > len(v)


def majority_stationary(reports: dict) -> bool:
    """Strict majority of available boolean reports (``None`` means unavailable)."""
    avail = [bool(v) for v in reports.values() if v is not None]
    return bool(avail) and 2 * sum(avail) > len(avail)
