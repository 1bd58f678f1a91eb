"""Relative-pose and 2-D body-speed factors."""

from __future__ import annotations

import numpy as np

from .. import lie
from .types import NU, POSE, STATE_DIM


def between_pose_residual(T_i, T_j, delta):
    """``log(T_i^-1 T_j delta)`` with ``delta`` the measured ``(T_i^-1 T_j)^-1``.

    Returns the residual ``(K, 6)`` and Jacobians ``(K, 6, 20)`` w.r.t. both states.
    """
    T_i, T_j, delta = (np.asarray(a, float) for a in (T_i, T_j, delta))
    r = lie.log_se3(lie.pose_inverse(T_i) @ T_j @ delta)
    batch = r.shape[:-1]
    Ji = np.zeros(batch + (6, STATE_DIM))
    Jj = np.zeros(batch + (6, STATE_DIM))
    Ji[..., POSE] = -lie.left_jacobian_inv_se3(r)
    Jj[..., POSE] = lie.right_jacobian_inv_se3(r) @ lie.adjoint(lie.pose_inverse(delta))
    return r, Ji, Jj


def velocity2d_residual(nu, v2d, lever, gyro):
    """Forward/lateral body speed ``[I2 0](nu + gyro x lever) - v2d``.

    ``gyro`` is a known input (bias-corrected rate at the sample time).
    """
    nu = np.asarray(nu, float)
    pred = nu + np.cross(np.asarray(gyro, float), np.broadcast_to(lever, nu.shape))
    r = pred[..., :2] - np.asarray(v2d, float)
    J = np.zeros(r.shape[:-1] + (2, STATE_DIM))
    J[..., 0, NU.start] = 1.0
    J[..., 1, NU.start + 1] = 1.0
    return r, J
