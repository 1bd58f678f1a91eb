"""Ground-truth trajectories with analytic body velocity and acceleration.

Two generators are provided:

* :class:`SegmentTrajectory`: piecewise motion with constant body angular rate
  and constant body linear acceleration per segment, integrated in closed form.
* :class:`SplineTrajectory`: quintic spline through ENU waypoints with a level
  attitude aligned to the horizontal velocity (C^2 or better).

Both return ``(T, w, wd)``: body-to-ECEF pose, body velocity ``[nu, omega]``
and its time derivative, batched over an array of query times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from .. import geodesy, lie

SERIES_ARG = 1e-2


def _coeffs(x: np.ndarray):
    """Scaled integrals of exp(u W) used by the screw-motion closed form.

    Returns ``c1 = (1-cos x)/x^2``, ``c2 = (x-sin x)/x^3``,
    ``c3 = (sin x - x cos x)/x^3`` and ``c4 = (1/2 + c1 - sin x/x)/x^2``.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_ARG
    xs = np.where(small, 1.0, x)
    x2 = x * x
    c1 = np.where(small, 0.5 - x2 / 24 + x2 * x2 / 720, (1 - np.cos(xs)) / xs**2)
    c2 = np.where(small, 1 / 6 - x2 / 120 + x2 * x2 / 5040, (xs - np.sin(xs)) / xs**3)
    c3 = np.where(small, 1 / 3 - x2 / 30 + x2 * x2 / 840, (np.sin(xs) - xs * np.cos(xs)) / xs**3)
    c4 = np.where(small, 1 / 8 - x2 / 144 + x2 * x2 / 5760, (0.5 + (1 - np.cos(xs)) / xs**2 - np.sin(xs) / xs) / xs**2)
    return c1, c2, c3, c4


def screw_increment(nu0, accel, omega, s):
    """Relative pose after time ``s`` under constant body ``omega`` and body acceleration.

    Returns ``(dR, dp, nu)`` with ``dp`` expressed in the starting body frame.
    """
    s = np.asarray(s, dtype=float)
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    W = lie.skew(omega)
    W2 = W @ W
    c1, c2, c3, c4 = _coeffs(theta * s)
    s_ = s[..., None, None]
    eye = np.eye(3)
    A1 = s_ * eye + (s_**2 * c1[..., None, None]) * W + (s_**3 * c2[..., None, None]) * W2
    A2 = 0.5 * s_**2 * eye + (s_**3 * c3[..., None, None]) * W + (s_**4 * c4[..., None, None]) * W2
    dp = np.einsum("...ij,j->...i", A1, nu0) + np.einsum("...ij,j->...i", A2, accel)
    dR = lie.so3_exp(omega * s[..., None])
    nu = nu0 + accel * s[..., None]
    return dR, dp, nu


@dataclass(frozen=True)
class TwistSegment:
    duration: float
    accel: tuple = (0.0, 0.0, 0.0)
    omega: tuple = (0.0, 0.0, 0.0)


def level_attitude(origin_llh, heading_rad: float) -> np.ndarray:
    """Body (forward-right-down) to ECEF rotation for a level vehicle."""
    c, s = np.cos(heading_rad), np.sin(heading_rad)
    R_bn = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return geodesy.dcm_ecef_to_ned(origin_llh).T @ R_bn


class SegmentTrajectory:
    """Constant-twist-rate segments chained from an initial pose and body velocity.

    Beyond the last segment the final segment's motion is continued.
    """

    def __init__(self, origin_llh, heading_rad: float, nu0, segments):
        self.origin_llh = np.asarray(origin_llh, dtype=float)
        self.segments = [s if isinstance(s, TwistSegment) else TwistSegment(**s) for s in segments]
        if not self.segments:
            raise ValueError("at least one trajectory segment is required")
        if any(s.duration <= 0.0 for s in self.segments):
            raise ValueError("segment durations must be positive")
        T = lie.make_pose(level_attitude(self.origin_llh, heading_rad), geodesy.llh_to_ecef(self.origin_llh))
        nu = np.asarray(nu0, dtype=float)
        starts, poses, nus = [], [], []
        t = 0.0
        for seg in self.segments:
            starts.append(t)
            poses.append(T)
            nus.append(nu)
            dR, dp, nu = screw_increment(nu, np.asarray(seg.accel, float), np.asarray(seg.omega, float), np.array(seg.duration))
            T = T @ lie.make_pose(dR, dp)
            T[:3, :3] = lie.reorthonormalize(T[:3, :3])
            t += seg.duration
        self.t_start = np.array(starts)
        self.duration = t
        self._T0 = np.array(poses)
        self._nu0 = np.array(nus)
        self._acc = np.array([s.accel for s in self.segments], dtype=float)
        self._omg = np.array([s.omega for s in self.segments], dtype=float)

    def state(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.t_start, t, side="right") - 1, 0, len(self.segments) - 1)
        T = np.empty(t.shape + (4, 4))
        w = np.empty(t.shape + (6,))
        wd = np.zeros(t.shape + (6,))
        for seg in np.unique(k):
            m = k == seg
            s = t[m] - self.t_start[seg]
            dR, dp, nu = screw_increment(self._nu0[seg], self._acc[seg], self._omg[seg], s)
            T[m] = self._T0[seg] @ lie.make_pose(dR, dp)
            w[m, :3] = nu
            w[m, 3:] = self._omg[seg]
            wd[m, :3] = self._acc[seg]
        return T, w, wd


class SplineTrajectory:
    """Quintic position spline through ENU waypoints; yaw follows the horizontal velocity."""

    def __init__(self, origin_llh, times, waypoints_enu):
        self.origin_llh = np.asarray(origin_llh, dtype=float)
        times = np.asarray(times, dtype=float)
        pts = np.asarray(waypoints_enu, dtype=float)
        if times.ndim != 1 or times.size < 6 or pts.shape != (times.size, 3):
            raise ValueError("spline trajectories need at least 6 waypoints with matching times")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("waypoint times must be strictly increasing")
        self.duration = float(times[-1] - times[0])
        self._t0 = times[0]
        self._spl = [make_interp_spline(times - times[0], pts, k=5)]
        for _ in range(4):
            self._spl.append(self._spl[-1].derivative())
        self._C_en = geodesy.dcm_ecef_to_enu(self.origin_llh)
        self._Rne = geodesy.dcm_ecef_to_ned(self.origin_llh).T
        self._origin = geodesy.llh_to_ecef(self.origin_llh)

    def state(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p, v, a, j = (self._spl[k](t) for k in range(4))
        # ENU -> NED components
        vn, ve = v[:, 1], v[:, 0]
        an, ae = a[:, 1], a[:, 0]
        jn, je = j[:, 1], j[:, 0]
        h2 = vn * vn + ve * ve
        if np.any(h2 < 1e-6):
            raise ValueError("spline trajectory needs non-zero horizontal speed for its heading")
        yaw = np.arctan2(ve, vn)
        num = vn * ae - ve * an
        yaw_d = num / h2
        num_d = vn * je - ve * jn
        h2_d = 2.0 * (vn * an + ve * ae)
        yaw_dd = (num_d * h2 - num * h2_d) / (h2 * h2)
        c, s = np.cos(yaw), np.sin(yaw)
        R_bn = np.zeros(t.shape + (3, 3))
        R_bn[:, 0, 0], R_bn[:, 0, 1], R_bn[:, 1, 0], R_bn[:, 1, 1], R_bn[:, 2, 2] = c, -s, s, c, 1.0
        R = self._Rne @ R_bn
        pos = self._origin + p @ self._C_en
        v_e = v @ self._C_en
        a_e = a @ self._C_en
        T = lie.make_pose(R, pos)
        Rt = np.swapaxes(R, -1, -2)
        nu = np.einsum("nij,nj->ni", Rt, v_e)
        omega = np.zeros(t.shape + (3,))
        omega[:, 2] = yaw_d
        # nu_dot = R^T a - omega x nu
        nu_d = np.einsum("nij,nj->ni", Rt, a_e) - np.cross(omega, nu)
        w = np.concatenate([nu, omega], axis=-1)
        wd = np.zeros(t.shape + (6,))
        wd[:, :3] = nu_d
        wd[:, 5] = yaw_dd
        return T, w, wd
