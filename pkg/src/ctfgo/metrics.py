"""Trajectory error and smoothness metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import geodesy

DUPLICATE_EPS = 1e-12


class TooFewPoints(ValueError):
    pass


def _dedupe(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return points
    step = np.linalg.norm(np.diff(points, axis=0), axis=-1)
    return points[np.concatenate([[True], step > DUPLICATE_EPS])]


def smoothness(positions) -> float:
    """Sum over point triples of ``(2 (pi - angle) / (a + b))^2``; 0 for a straight path.

    ``a`` and ``b`` are the two segment lengths meeting at the middle point,
    ``c`` the chord, and ``angle`` the interior angle from the law of cosines.
    Consecutive duplicate points are removed first.
    """
    p = _dedupe(np.asarray(positions, dtype=float))
    if len(p) < 3:
        raise TooFewPoints(f"smoothness needs >= 3 distinct consecutive points, got {len(p)}")
    a = np.linalg.norm(p[1:-1] - p[:-2], axis=-1)
    b = np.linalg.norm(p[2:] - p[1:-1], axis=-1)
    c = np.linalg.norm(p[2:] - p[:-2], axis=-1)
    cos = np.clip((a * a + b * b - c * c) / (2.0 * a * b), -1.0, 1.0)
    turn = 2.0 * (np.pi - np.arccos(cos)) / (a + b)
    return float(np.sum(turn * turn))


def rmse(err) -> float:
    err = np.asarray(err, dtype=float)
    if err.size == 0:
        return float("nan")
    if err.ndim == 1:
        return float(np.sqrt(np.mean(err * err)))
    return float(np.sqrt(np.mean(np.sum(err * err, axis=-1))))


def ned_euler(poses: np.ndarray) -> np.ndarray:
    """Roll, pitch, yaw (rad) of body-to-ECEF poses relative to the local NED frame."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 4, 4)
    llh = geodesy.ecef_to_llh(poses[:, :3, 3])
    R_nb = geodesy.dcm_ecef_to_ned(llh) @ poses[:, :3, :3]
    ypr = Rotation.from_matrix(R_nb).as_euler("ZYX")
    return ypr[:, ::-1]


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class MetricsReport:
    rmse_2d_m: float
    rmse_3d_m: float
    max_2d_err_m: float
    mean_yaw_err_deg: float
    smoothness_s: float
    n_epochs: int
    mean_iterations: float = 0.0
    max_iterations: int = 0
    velocity_rmse_mps: float = float("nan")
    errors_2d_m: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_KEYS = tuple(k for k in MetricsReport.__dataclass_fields__ if k != "errors_2d_m")


def evaluate_trajectory(t, poses, truth, origin_llh, velocities=None, t_end: float | None = None) -> dict:
    """ENU position errors, yaw errors and smoothness of a trajectory against ``truth``.

    Only epochs in ``[0, t_end]`` (the span with valid truth) contribute.
    """
    t = np.asarray(t, dtype=float)
    poses = np.asarray(poses, dtype=float).reshape(-1, 4, 4)
    t_end = getattr(truth, "duration", np.inf) if t_end is None else t_end
    valid = (t >= -1e-9) & (t <= t_end + 1e-9)
    t, poses = t[valid], poses[valid]
    T_true, w_true, _ = truth.state(t)
    d = geodesy.ecef_to_enu(poses[:, :3, 3], origin_llh) - geodesy.ecef_to_enu(T_true[:, :3, 3], origin_llh)
    e2 = np.linalg.norm(d[:, :2], axis=-1)
    dyaw = wrap_angle(ned_euler(poses)[:, 2] - ned_euler(T_true)[:, 2])
    out = {
        "t": t,
        "errors_2d": e2,
        "rmse_2d": rmse(d[:, :2]),
        "rmse_3d": rmse(d),
        "max_2d": float(e2.max()) if e2.size else float("nan"),
        "mean_yaw_deg": float(np.degrees(np.mean(np.abs(dyaw)))) if dyaw.size else float("nan"),
        "smoothness": smoothness(geodesy.ecef_to_enu(poses[:, :3, 3], origin_llh)) if len(t) >= 3 else float("nan"),
    }
    if velocities is not None:
        v = np.asarray(velocities, dtype=float)[valid]
        v_true = np.einsum("nij,nj->ni", T_true[:, :3, :3], w_true[:, :3])
        out["velocity_rmse"] = rmse(v - v_true)
    return out
