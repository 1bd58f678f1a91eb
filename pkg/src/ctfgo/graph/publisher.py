"""High-rate state output: newest smoothed state propagated with IMU strapdown."""

from __future__ import annotations

import numpy as np

from .. import geodesy, lie
from ..factors.types import NavState


class Publisher:
    """Holds the newest optimized state and dead-reckons it forward with raw IMU samples."""

    def __init__(self):
        self.state: NavState | None = None
        self._acc = None
        self._gyro = None

    def reset(self, state: NavState, acc=None, gyro=None) -> None:
        """Restart from an optimized state; ``acc``/``gyro`` is the sample held from its time."""
        self.state = state.copy()
        self._acc = None if acc is None else np.asarray(acc, float)
        self._gyro = None if gyro is None else np.asarray(gyro, float)

    def current(self) -> NavState:
        return self.state.copy()

    def step(self, t: float, acc, gyro) -> NavState:
        """Integrate the held sample up to ``t``, then hold the new sample ``(acc, gyro)``."""
        s = self.state
        dt = t - s.timestamp
        if dt > 0.0 and self._acc is not None:
            w = self._gyro - s.bias_gyro
            f = self._acc - s.bias_acc
            R = s.rotation
            v = R @ s.velocity[:3]
            a = R @ f + geodesy.gravity_ecef(s.position)
            p = s.position + v * dt + 0.5 * a * dt * dt
            R_new = R @ lie.so3_exp(w * dt)
            v_new = v + a * dt
            s.pose = lie.make_pose(R_new, p)
            s.velocity = np.concatenate([R_new.T @ v_new, w])
        if dt > 0.0:
            s.timestamp = float(t)
        self._acc = np.asarray(acc, float)
        self._gyro = np.asarray(gyro, float)
        return s.copy()
