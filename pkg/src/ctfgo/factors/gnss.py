"""GNSS factors: pseudorange/Doppler, PVT fix, receiver clock and C/N0 weighting.

Residual functions are batched over a leading axis of factors and return
Jacobians with respect to the 20-dim state tangent (see ``types``).
"""

from __future__ import annotations

import numpy as np

from .. import geodesy, lie
from .types import CLK, NU, POS, ROT, STATE_DIM, DegenerateGeometry

MIN_RANGE = 1e6


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def cn0_variance(cn0_dbhz, lambda_rho: float, lambda_doppler: float):
    """Variances ``lambda * 10^(-C/N0 / 10)`` for pseudorange and Doppler rows."""
    scale = 10.0 ** (-np.asarray(cn0_dbhz, dtype=float) / 10.0)
    return lambda_rho * scale, lambda_doppler * scale


def antenna_kinematics(T, nu, lever, gyro):
    """Antenna position and Earth-fixed velocity plus their state Jacobians.

    ``gyro`` is the bias-corrected angular rate used for the lever-arm term;
    it is a known input and carries no Jacobian.
    """
    R = T[..., :3, :3]
    p = T[..., :3, 3]
    lever = np.broadcast_to(lever, p.shape)
    p_ant = p + _mv(R, lever)
    nu_ant = nu + np.cross(gyro, lever)
    v_ant = _mv(R, nu_ant)
    batch = p.shape[:-1]
    Jp = np.zeros(batch + (3, STATE_DIM))
    Jp[..., POS] = R
    Jp[..., ROT] = -R @ lie.skew(lever)
    Jv = np.zeros(batch + (3, STATE_DIM))
    Jv[..., ROT] = -R @ lie.skew(nu_ant)
    Jv[..., NU] = R
    return p_ant, v_ant, Jp, Jv


def prdo_residual(T, nu, clock, sat_pos, sat_vel, pseudorange, doppler_hz, wavelength, lever, gyro):
    """Pseudorange and Doppler residuals ``(K, 2)`` and Jacobians ``(K, 2, 20)``.

    ``r_pr = |p_ant - p_sat| + c_b - rho`` and
    ``r_do = u . (v_ant - v_sat) + c_d + wavelength * doppler`` with ``u`` the
    unit vector from antenna to satellite.
    """
    p_ant, v_ant, Jp, Jv = antenna_kinematics(np.asarray(T, float), np.asarray(nu, float), lever, gyro)
    d = np.asarray(sat_pos, float) - p_ant
    rng = np.linalg.norm(d, axis=-1)
    if np.any(rng < MIN_RANGE):
        raise DegenerateGeometry("antenna-satellite distance below 1000 km")
    u = d / rng[..., None]
    dv = v_ant - np.asarray(sat_vel, float)
    clock = np.asarray(clock, float)
    r_pr = rng + clock[..., 0] - pseudorange
    r_do = np.sum(u * dv, axis=-1) + clock[..., 1] + wavelength * np.asarray(doppler_hz, float)
    # d u / d p_ant = -(I - u u^T) / range
    du_row = -(dv - np.sum(u * dv, axis=-1, keepdims=True) * u) / rng[..., None]
    J = np.zeros(r_pr.shape + (2, STATE_DIM))
    J[..., 0, :] = np.einsum("...i,...ij->...j", -u, Jp)
    J[..., 0, CLK.start] = 1.0
    J[..., 1, :] = np.einsum("...i,...ij->...j", du_row, Jp) + np.einsum("...i,...ij->...j", u, Jv)
    J[..., 1, CLK.start + 1] = 1.0
    return np.stack([r_pr, r_do], axis=-1), J


def pvt_residual(T, nu, position, velocity_ned, lever, gyro):
    """PVT fix residual ``(K, 6)``: ECEF antenna position and NED antenna velocity."""
    p_ant, v_ant, Jp, Jv = antenna_kinematics(np.asarray(T, float), np.asarray(nu, float), lever, gyro)
    position = np.asarray(position, float)
    Rn = geodesy.dcm_ecef_to_ned(geodesy.ecef_to_llh(position))
    r = np.concatenate([p_ant - position, _mv(Rn, v_ant) - np.asarray(velocity_ned, float)], axis=-1)
    J = np.concatenate([Jp, Rn @ Jv], axis=-2)
    return r, J


def clock_residual(clock_prev, clock, dt):
    """Constant-drift clock model residual ``(K, 2)`` and Jacobians w.r.t. both states."""
    clock_prev = np.asarray(clock_prev, float)
    clock = np.asarray(clock, float)
    dt = np.asarray(dt, float)
    r = np.stack([clock_prev[..., 0] + dt * clock_prev[..., 1] - clock[..., 0], clock_prev[..., 1] - clock[..., 1]], axis=-1)
    Ji = np.zeros(r.shape[:-1] + (2, STATE_DIM))
    Ji[..., 0, CLK.start] = 1.0
    Ji[..., 0, CLK.start + 1] = dt
    Ji[..., 1, CLK.start + 1] = 1.0
    Jj = np.zeros_like(Ji)
    Jj[..., 0, CLK.start] = -1.0
    Jj[..., 1, CLK.start + 1] = -1.0
    return r, Ji, Jj


def clock_covariance(dt, q_bias: float, q_drift: float) -> np.ndarray:
    dt = np.asarray(dt, float)
    out = np.zeros(dt.shape + (2, 2))
    out[..., 0, 0] = q_bias * dt
    out[..., 1, 1] = q_drift * dt
    return out
