"""IMU preintegration, preintegrated IMU factor and bias random-walk factor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import lie
from .types import BA, BG, NU, POS, ROT, STATE_DIM, EmptyStream, ImuSample, NonMonotoneTime

BIAS_RELINEARIZE = 0.1


class StaleBiasLinearization(ValueError):
    """Bias moved too far from the preintegration linearization point."""


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities.

    ``acc`` in m/s^2/sqrt(Hz), ``gyro`` in rad/s/sqrt(Hz); the bias random
    walks in the same units per sqrt(s).
    """

    acc: float = 2e-3
    gyro: float = 2e-4
    acc_bias_walk: float = 1e-4
    gyro_bias_walk: float = 1e-5


@dataclass
class Preintegrated:
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    dt_total: float
    covariance: np.ndarray
    bias_acc: np.ndarray
    bias_gyro: np.ndarray
    gravity: np.ndarray
    J_R_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_v_ba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_v_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_p_ba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    J_p_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


def _as_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 3 and not isinstance(samples[0], ImuSample):
        t, acc, gyr = (np.asarray(a, float) for a in samples)
    else:
        samples = list(samples)
        if not samples:
            raise EmptyStream("no IMU samples to integrate")
        t = np.array([s.t for s in samples], dtype=float)
        acc = np.array([s.accel for s in samples], dtype=float)
        gyr = np.array([s.gyro for s in samples], dtype=float)
    if t.size == 0:
        raise EmptyStream("no IMU samples to integrate")
    if np.any(np.diff(t) <= 0.0):
        raise NonMonotoneTime("IMU timestamps must be strictly increasing")
    return t, acc.reshape(-1, 3), gyr.reshape(-1, 3)


def preintegrate(
    samples,
    bias_acc=np.zeros(3),
    bias_gyro=np.zeros(3),
    gravity=np.zeros(3),
    t_end: float | None = None,
    noise: ImuNoise = ImuNoise(),
) -> Preintegrated:
    """Integrate samples held constant until the next timestamp (or ``t_end``).

    ``samples`` is a sequence of :class:`ImuSample` or a tuple ``(t, acc, gyro)``.
    Without ``t_end`` the last sample is held for the median sample interval.
    """
    t, acc, gyr = _as_arrays(samples)
    if t_end is None:
        t_end = t[-1] + (float(np.median(np.diff(t))) if t.size > 1 else 0.0)
    if t_end < t[-1]:
        raise NonMonotoneTime("integration end precedes the last sample")
    dts = np.diff(np.append(t, t_end))
    ba = np.asarray(bias_acc, float)
    bg = np.asarray(bias_gyro, float)
    a = acc - ba
    w = gyr - bg
    incr = lie.so3_exp(w * dts[:, None])
    Jr = lie.so3_right_jacobian(w * dts[:, None])
    a_hat = lie.skew(a)
    var_a = noise.acc**2 / np.where(dts > 0, dts, 1.0)
    var_g = noise.gyro**2 / np.where(dts > 0, dts, 1.0)

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    C = np.zeros((9, 9))
    JRg = np.zeros((3, 3))
    Jva = np.zeros((3, 3))
    Jvg = np.zeros((3, 3))
    Jpa = np.zeros((3, 3))
    Jpg = np.zeros((3, 3))
    A = np.eye(9)
    B = np.zeros((9, 6))
    for k in range(t.size):
        h = dts[k]
        if h <= 0.0:
            continue
        Ra = dR @ a[k]
        RaH = dR @ a_hat[k]
        # covariance in (dphi, dv, dp) order
        A[:3, :3] = incr[k].T
        A[3:6, :3] = -RaH * h
        A[6:9, :3] = -0.5 * RaH * h * h
        A[6:9, 3:6] = np.eye(3) * h
        B[:3, :3] = 0.0
        B[:3, 3:] = Jr[k] * h
        B[3:6, :3] = dR * h
        B[6:9, :3] = 0.5 * dR * h * h
        C = A @ C @ A.T + (B[:, :3] * var_a[k]) @ B[:, :3].T + (B[:, 3:] * var_g[k]) @ B[:, 3:].T
        # bias jacobians
        Jpa = Jpa + Jva * h - 0.5 * dR * h * h
        Jpg = Jpg + Jvg * h - 0.5 * RaH @ JRg * h * h
        Jva = Jva - dR * h
        Jvg = Jvg - RaH @ JRg * h
        JRg = incr[k].T @ JRg - Jr[k] * h
        # means
        dp = dp + dv * h + 0.5 * Ra * h * h
        dv = dv + Ra * h
        dR = dR @ incr[k]
    dR = lie.reorthonormalize(dR)
    C = 0.5 * (C + C.T) + 1e-15 * np.eye(9)
    return Preintegrated(
        dR, dv, dp, float(t_end - t[0]), C, ba.copy(), bg.copy(), np.asarray(gravity, float).copy(),
        JRg, Jva, Jvg, Jpa, Jpg,
    )


def stack_preintegrated(items):
    """Stack a list of :class:`Preintegrated` into a batch with the same attributes."""

    class _Batch:
        pass

    out = _Batch()
    for name in Preintegrated.__dataclass_fields__:
        setattr(out, name, np.array([getattr(p, name) for p in items], dtype=float))
    return out


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def imu_residual(T_i, nu_i, ba_i, bg_i, T_j, nu_j, pre, check_bias: bool = True):
    """Preintegrated IMU residual rows ``[r_R, r_v, r_p]`` with first-order bias correction.

    ``pre`` is a :class:`Preintegrated` or a stacked batch. World velocities
    are ``R nu``. Returns ``r`` (..., 9) and Jacobians w.r.t. both states
    (..., 9, 20).
    """
    T_i, T_j = np.asarray(T_i, float), np.asarray(T_j, float)
    nu_i, nu_j = np.asarray(nu_i, float), np.asarray(nu_j, float)
    dba = np.asarray(ba_i, float) - pre.bias_acc
    dbg = np.asarray(bg_i, float) - pre.bias_gyro
    if check_bias:
        stale = np.maximum(np.linalg.norm(dba, axis=-1), np.linalg.norm(dbg, axis=-1)) > BIAS_RELINEARIZE
        if np.any(stale):
            raise StaleBiasLinearization("bias drifted beyond the preintegration linearization point")
    dt = np.asarray(pre.dt_total, float)[..., None]
    g = pre.gravity
    R_i, R_j = T_i[..., :3, :3], T_j[..., :3, :3]
    p_i, p_j = T_i[..., :3, 3], T_j[..., :3, 3]
    Rit = np.swapaxes(R_i, -1, -2)
    v_j = _mv(R_j, nu_j)

    corr = _mv(pre.J_R_bg, dbg)
    dR_hat = pre.dR @ lie.so3_exp(corr)
    E = np.swapaxes(dR_hat, -1, -2) @ Rit @ R_j
    r_R = lie.so3_log(E)
    dv_hat = pre.dv + _mv(pre.J_v_ba, dba) + _mv(pre.J_v_bg, dbg)
    dp_hat = pre.dp + _mv(pre.J_p_ba, dba) + _mv(pre.J_p_bg, dbg)
    a_v = _mv(Rit, v_j - g * dt)
    r_v = a_v - nu_i - dv_hat
    a_p = _mv(Rit, p_j - p_i - 0.5 * g * dt * dt)
    r_p = a_p - nu_i * dt - dp_hat
    r = np.concatenate([r_R, r_v, r_p], axis=-1)

    batch = r.shape[:-1]
    eye = np.broadcast_to(np.eye(3), batch + (3, 3))
    JrInv = lie.so3_right_jacobian_inv(r_R)
    RiRj = Rit @ R_j
    Ji = np.zeros(batch + (9, STATE_DIM))
    Jj = np.zeros(batch + (9, STATE_DIM))
    Ji[..., 0:3, ROT] = -JrInv @ np.swapaxes(RiRj, -1, -2)
    Ji[..., 0:3, BG] = -JrInv @ np.swapaxes(E, -1, -2) @ lie.so3_right_jacobian(corr) @ pre.J_R_bg
    Jj[..., 0:3, ROT] = JrInv
    Ji[..., 3:6, ROT] = lie.skew(a_v)
    Ji[..., 3:6, NU] = -eye
    Ji[..., 3:6, BA] = -pre.J_v_ba
    Ji[..., 3:6, BG] = -pre.J_v_bg
    Jj[..., 3:6, ROT] = -RiRj @ lie.skew(nu_j)
    Jj[..., 3:6, NU] = RiRj
    Ji[..., 6:9, POS] = -eye
    Ji[..., 6:9, ROT] = lie.skew(a_p)
    Ji[..., 6:9, NU] = -dt[..., None] * eye
    Ji[..., 6:9, BA] = -pre.J_p_ba
    Ji[..., 6:9, BG] = -pre.J_p_bg
    Jj[..., 6:9, POS] = RiRj
    return r, Ji, Jj


def bias_residual(ba_i, bg_i, ba_j, bg_j):
    """Random-walk bias residual ``b_j - b_i`` (..., 6) with constant Jacobians."""
    r = np.concatenate([np.asarray(ba_j, float) - ba_i, np.asarray(bg_j, float) - bg_i], axis=-1)
    batch = r.shape[:-1]
    Ji = np.zeros(batch + (6, STATE_DIM))
    Jj = np.zeros(batch + (6, STATE_DIM))
    Ji[..., 0:3, BA] = -np.eye(3)
    Ji[..., 3:6, BG] = -np.eye(3)
    Jj[..., 0:3, BA] = np.eye(3)
    Jj[..., 3:6, BG] = np.eye(3)
    return r, Ji, Jj


def bias_covariance(dt, noise: ImuNoise = ImuNoise()) -> np.ndarray:
    dt = np.asarray(dt, float)
    diag = np.concatenate([np.full(3, noise.acc_bias_walk**2), np.full(3, noise.gyro_bias_walk**2)])
    return dt[..., None, None] * np.diag(diag)


def predict(T_i, nu_i, pre: Preintegrated):
    """Propagate pose and world velocity with the preintegrated deltas (bias at lin point)."""
    R_i, p_i = T_i[:3, :3], T_i[:3, 3]
    v_i = R_i @ nu_i
    dt = pre.dt_total
    R_j = R_i @ pre.dR
    v_j = v_i + pre.gravity * dt + R_i @ pre.dv
    p_j = p_i + v_i * dt + 0.5 * pre.gravity * dt * dt + R_i @ pre.dp
    return lie.make_pose(R_j, p_j), R_j.T @ v_j
