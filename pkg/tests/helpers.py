from __future__ import annotations

import numpy as np

from ctfgo import lie
from ctfgo.factors.types import NavState


def random_pose(rng, rot_scale=1.0, trans_scale=10.0, center=None):
    xi = np.concatenate([rng.normal(size=3) * trans_scale, rng.normal(size=3) * rot_scale])
    T = lie.exp_se3(xi)
    if center is not None:
        T[:3, 3] += center
    return T


def random_state(rng, t=0.0, center=None, clock=True):
    return NavState(
        timestamp=t,
        pose=random_pose(rng, center=center),
        velocity=rng.normal(size=6) * [5, 5, 5, 0.3, 0.3, 0.3],
        accel_input=rng.normal(size=6) * 0.5,
        bias_acc=rng.normal(size=3) * 0.01,
        bias_gyro=rng.normal(size=3) * 0.001,
        clock=rng.normal(size=2) * [100.0, 1.0] if clock else np.zeros(2),
    )


def numeric_jacobian(f, state: NavState, h: float = 1e-6, h_pos: float = 1e-3, h_rot: float = 1e-4) -> np.ndarray:
    """Central differences of ``f(state)`` over the 20-dim state tangent.

    Pose and clock columns use larger steps: with ECEF coordinates and ranges
    of order 1e7 m a 1e-6 step sits at the rounding floor of the residual.
    """
    cols = []
    for k in range(20):
        e = np.zeros(20)
        step = h_pos if k < 3 or k >= 18 else h_rot if k < 6 else h
        e[k] = step
        cols.append((np.asarray(f(state.retract(e))) - np.asarray(f(state.retract(-e)))) / (2 * step))
    return np.stack(cols, axis=-1)


def assert_jacobian_close(analytic, numeric, rel=1e-5, abs_floor=1e-4):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    tol = np.maximum(abs_floor, rel * np.abs(numeric))
    bad = np.abs(analytic - numeric) > tol
    assert not bad.any(), f"max deviation {np.max(np.abs(analytic - numeric))}"
