"""Gaussian-process motion priors (WNOA / WNOJ) on SE(3).

The local GP state between two anchors lives in the tangent space of the
earlier pose: ``T(t) = T_i exp(xi(t))`` with ``xi(t_i) = 0``. Because poses
map body to Earth-fixed coordinates and the velocity ``w = [nu, omega]`` is
body-centric (``T^-1 dT/dt = w^``), the local kinematics are

    xi_dot  = Jr(xi)^-1 w
    xi_ddot = 1/2 curlywedge(xi_dot) w + Jr(xi)^-1 w_dot

with ``Jr`` the right Jacobian of SE(3). Everything is batched over a leading
axis of segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from . import lie


class GpModel(str, Enum):
    WNOA = "wnoa"
    WNOJ = "wnoj"

    @property
    def order(self) -> int:
        return 2 if self is GpModel.WNOA else 3


class NonPositiveDt(ValueError):
    pass


class QueryOutOfSegment(ValueError):
    pass


JACOBIAN_MODES = ("exact", "approx", "identity")


def _model(model) -> GpModel:
    return model if isinstance(model, GpModel) else GpModel(str(model).lower())


def _check_dt(dt: float) -> None:
    if not dt > 0.0:
        raise NonPositiveDt(f"segment length must be positive, got {dt}")


def phi_scalar(dt: float, order: int) -> np.ndarray:
    """Transition of an ``order``-th integrator chain for one axis (may take dt=0)."""
    if order == 2:
        return np.array([[1.0, dt], [0.0, 1.0]])
    return np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])


def q_scalar(dt: float, order: int) -> np.ndarray:
    if order == 2:
        return np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    return np.array(
        [
            [dt**5 / 20.0, dt**4 / 8.0, dt**3 / 6.0],
            [dt**4 / 8.0, dt**3 / 3.0, dt**2 / 2.0],
            [dt**3 / 6.0, dt**2 / 2.0, dt],
        ]
    )


def q_inv_scalar(dt: float, order: int) -> np.ndarray:
    if order == 2:
        return np.array([[12.0 / dt**3, -6.0 / dt**2], [-6.0 / dt**2, 4.0 / dt]])
    return np.array(
        [
            [720.0 / dt**5, -360.0 / dt**4, 60.0 / dt**3],
            [-360.0 / dt**4, 192.0 / dt**3, -36.0 / dt**2],
            [60.0 / dt**3, -36.0 / dt**2, 9.0 / dt],
        ]
    )


def make_transition(dt: float, model=GpModel.WNOJ) -> np.ndarray:
    """Block transition matrix acting on ``[xi, xi_dot(, xi_ddot)]``."""
    m = _model(model)
    if dt < 0.0:
        raise NonPositiveDt(f"negative transition interval {dt}")
    return np.kron(phi_scalar(dt, m.order), np.eye(6))


def make_q(dt: float, qc, model=GpModel.WNOJ) -> tuple[np.ndarray, np.ndarray]:
    """Process covariance ``Q(dt)`` and its closed-form inverse."""
    m = _model(model)
    _check_dt(dt)
    qc = np.broadcast_to(np.asarray(qc, dtype=float), (6,))
    if np.any(qc <= 0.0):
        raise ValueError("power spectral densities must be strictly positive")
    Q = np.kron(q_scalar(dt, m.order), np.diag(qc))
    Qi = np.kron(q_inv_scalar(dt, m.order), np.diag(1.0 / qc))
    return Q, Qi


@lru_cache(maxsize=4096)
def _interp_scalar(dt: float, tau: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    # Work in time normalized by dt, where Q(1) is well conditioned, then map
    # back with the derivative scaling gamma = D gamma_normalized.
    if tau <= 0.0:
        return np.eye(order), np.zeros((order, order))
    if tau >= dt:
        # Omega(dt) = Q(dt) Q(dt)^-1 = I and Lambda(dt) = Phi(dt) - Phi(dt) = 0 identically
        return np.zeros((order, order)), np.eye(order)
    s = tau / dt
    Om = q_scalar(s, order) @ phi_scalar(1.0 - s, order).T @ q_inv_scalar(1.0, order)
    La = phi_scalar(s, order) - Om @ phi_scalar(1.0, order)
    k = np.arange(order)
    scale = float(dt) ** (k[None, :] - k[:, None])
    return La * scale, Om * scale


def interpolation_scalar(dt: float, tau: float, model=GpModel.WNOJ) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``(Lambda, Omega)``; the full matrices are these Kronecker I6.

    The power spectral density cancels in both, so they depend only on the
    segment length and the query offset.
    """
    m = _model(model)
    _check_dt(dt)
    if not 0.0 <= tau <= dt:
        raise QueryOutOfSegment(f"query offset {tau} outside [0, {dt}]")
    La, Om = _interp_scalar(float(dt), float(tau), m.order)
    return La.copy(), Om.copy()


def interpolation_matrices(t_i: float, t_j: float, t_query: float, model=GpModel.WNOJ):
    """Full ``(Lambda, Omega)`` so that ``gamma(t) = Lambda gamma_i + Omega gamma_j``."""
    La, Om = interpolation_scalar(t_j - t_i, t_query - t_i, model)
    return np.kron(La, np.eye(6)), np.kron(Om, np.eye(6))


@dataclass(frozen=True)
class GpSegment:
    t_i: float
    t_j: float
    qc: np.ndarray = field(default_factory=lambda: np.ones(6))
    model: GpModel = GpModel.WNOJ

    def __post_init__(self):
        _check_dt(self.t_j - self.t_i)
        object.__setattr__(self, "model", _model(self.model))
        object.__setattr__(self, "qc", np.broadcast_to(np.asarray(self.qc, dtype=float), (6,)).copy())

    @property
    def dt(self) -> float:
        return self.t_j - self.t_i

    @property
    def phi(self) -> np.ndarray:
        return make_transition(self.dt, self.model)

    @property
    def q(self) -> np.ndarray:
        return make_q(self.dt, self.qc, self.model)[0]

    @property
    def q_inv(self) -> np.ndarray:
        return make_q(self.dt, self.qc, self.model)[1]

    @property
    def prior_covariance(self) -> np.ndarray:
        return prior_covariance(self.dt, self.qc, self.model)


def prior_covariance(dt: float, qc, model=GpModel.WNOJ) -> np.ndarray:
    """Covariance of the 12-row prior residual: the (xi, xi_dot) block of Q(dt).

    Accelerations are inputs, not states, so their rows and columns are left out.
    """
    return make_q(dt, qc, model)[0][:12, :12]


# ---------------------------------------------------------------------------
# kinematic helpers parameterized by the jacobian mode


def inv_jac(xi: np.ndarray, mode: str) -> np.ndarray:
    """``M(xi)``, the mode's stand-in for ``Jr(xi)^-1``."""
    return lie.right_jacobian_inv_se3(xi, mode)


def inv_jac_directional(xi: np.ndarray, w: np.ndarray, mode: str) -> np.ndarray:
    """Derivative of ``M(xi) w`` with respect to ``xi``."""
    return -lie.left_jacobian_inv_directional(-np.asarray(xi, dtype=float), w, mode)


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def _cw(v):
    return lie.curlywedge(v)


def xi_ddot(xi_dot: np.ndarray, w: np.ndarray, wd: np.ndarray, M: np.ndarray, mode: str) -> np.ndarray:
    out = _mv(M, wd)
    if mode != "identity":
        out = out + 0.5 * _mv(_cw(xi_dot), w)
    return out


def lift_to_local(T_i, w_i, wd_i, T_j, w_j, wd_j, mode: str = "exact"):
    """Local GP states ``gamma_i`` and ``gamma_j`` (18-vectors) of a segment."""
    xi = lie.log_se3(lie.pose_inverse(np.asarray(T_i)) @ np.asarray(T_j))
    M = inv_jac(xi, mode)
    xd = _mv(M, w_j)
    xdd = xi_ddot(xd, np.asarray(w_j, float), np.asarray(wd_j, float), M, mode)
    zero = np.zeros_like(xi)
    gamma_i = np.concatenate([zero, np.asarray(w_i, float), np.asarray(wd_i, float)], axis=-1)
    gamma_j = np.concatenate([xi, xd, xdd], axis=-1)
    return gamma_i, gamma_j


# ---------------------------------------------------------------------------
# prior factor


def prior_residual(T_i, w_i, wd_i, T_j, w_j, dt, model=GpModel.WNOJ, mode: str = "exact"):
    """12-row prior residual and Jacobians for a batch of segments.

    Returns ``r`` of shape (..., 12) and a dict of Jacobians with keys
    ``pose_i, vel_i, pose_j, vel_j`` (each (..., 12, 6)). Pose Jacobians are
    with respect to right perturbations ``T <- T exp(delta)``.
    """
    m = _model(model)
    T_i, T_j = np.asarray(T_i, float), np.asarray(T_j, float)
    w_i, w_j, wd_i = (np.asarray(a, float) for a in (w_i, w_j, wd_i))
    dt = np.asarray(dt, float)[..., None]
    if np.any(dt <= 0.0):
        raise NonPositiveDt("segment length must be positive")
    xi = lie.log_se3(lie.pose_inverse(T_i) @ T_j)
    M = inv_jac(xi, mode)
    r1 = xi - dt * w_i
    r2 = _mv(M, w_j) - w_i
    if m is GpModel.WNOJ:
        r1 = r1 - 0.5 * dt * dt * wd_i
        r2 = r2 - dt * wd_i
    r = np.concatenate([r1, r2], axis=-1)

    batch = xi.shape[:-1]
    eye = np.broadcast_to(np.eye(6), batch + (6, 6))
    dxi_dj = lie.right_jacobian_inv_se3(xi)
    dxi_di = -lie.left_jacobian_inv_se3(xi)
    D = inv_jac_directional(xi, w_j, mode)
    J = {}
    J["pose_i"] = np.concatenate([dxi_di, D @ dxi_di], axis=-2)
    J["pose_j"] = np.concatenate([dxi_dj, D @ dxi_dj], axis=-2)
    J["vel_i"] = np.concatenate([-dt[..., None] * eye, -eye], axis=-2)
    J["vel_j"] = np.concatenate([np.zeros(batch + (6, 6)), M], axis=-2)
    return r, J


# ---------------------------------------------------------------------------
# state query


def query(T_i, w_i, wd_i, T_j, w_j, wd_j, dt, tau, model=GpModel.WNOJ, mode: str = "exact", jacobians: bool = True,
          pair_index=None):
    """Interpolated pose and body velocity at ``t_i + tau``.

    Inputs are batched over a leading axis; ``dt`` and ``tau`` may be scalars
    or arrays. Returns ``(T, w, J)`` where ``J`` maps perturbations of
    ``(pose_i, vel_i, pose_j, vel_j)`` to perturbations of the queried pose
    (rows 0:6) and velocity (rows 6:12): keys as in :func:`prior_residual`,
    each of shape (..., 12, 6). Accelerations are inputs and carry no Jacobian.

    With ``pair_index`` (1-D), the state inputs describe segments and query
    ``q`` uses segment ``pair_index[q]``; per-segment terms are computed once.
    """
    m = _model(model)
    T_i, T_j = np.asarray(T_i, float), np.asarray(T_j, float)
    w_i, w_j, wd_i, wd_j = (np.asarray(a, float) for a in (w_i, w_j, wd_i, wd_j))
    if pair_index is None:
        batch = np.broadcast_shapes(T_i.shape[:-2], T_j.shape[:-2], np.shape(dt), np.shape(tau))
        gather = lambda a: a
    else:
        pair_index = np.asarray(pair_index, dtype=int)
        batch = pair_index.shape
        gather = lambda a: a[pair_index]
    dts = np.broadcast_to(np.asarray(dt, float), batch)
    taus = np.broadcast_to(np.asarray(tau, float), batch)
    n = m.order
    La = np.empty(batch + (n, n))
    Om = np.empty(batch + (n, n))
    for idx in np.ndindex(*batch):
        La[idx], Om[idx] = interpolation_scalar(float(dts[idx]), float(taus[idx]), m)

    xi_p = lie.log_se3(lie.pose_inverse(T_i) @ T_j)
    M_p = inv_jac(xi_p, mode)
    xd_p = _mv(M_p, w_j)
    xdd_p = xi_ddot(xd_p, w_j, wd_j, M_p, mode)
    xi_j, M_j, xd_j = gather(xi_p), gather(M_p), gather(xd_p)
    T_i = gather(T_i)
    terms_i = [None, gather(w_i), gather(wd_i)][:n]
    terms_j = [xi_j, xd_j, gather(xdd_p)][:n]

    def row(k):
        out = np.zeros(batch + (6,))
        for c in range(1, n):
            out = out + La[..., k, c, None] * terms_i[c]
        for c in range(n):
            out = out + Om[..., k, c, None] * terms_j[c]
        return out

    xi_t = row(0)
    xd_t = row(1)
    E_t = lie.exp_se3(xi_t)
    T_t = T_i @ E_t
    M_t = inv_jac(xi_t, mode)
    w_t = np.linalg.solve(M_t, xd_t[..., None])[..., 0]
    if not jacobians:
        return T_t, w_t, None

    zeros = np.zeros(batch + (6, 6))
    eye = np.broadcast_to(np.eye(6), batch + (6, 6))
    # derivatives of the local endpoint terms: d(term)/d(xi_j) and d(term)/d(w_j)
    dxd_dxi_p = inv_jac_directional(xi_p, w_j, mode)
    dxd_dxi = gather(dxd_dxi_p)
    dxd_dw = M_j
    if n == 3:
        dxdd_dxi = inv_jac_directional(xi_p, wd_j, mode)
        dxdd_dw = np.zeros(xi_p.shape[:-1] + (6, 6))
        if mode != "identity":
            half_cw_w = -0.5 * _cw(w_j)
            dxdd_dxi = dxdd_dxi + half_cw_w @ dxd_dxi_p
            dxdd_dw = 0.5 * _cw(xd_p) + half_cw_w @ M_p
        d_xi = [eye, dxd_dxi, gather(dxdd_dxi)]
        d_w = [zeros, dxd_dw, gather(dxdd_dw)]
    else:
        d_xi = [eye, dxd_dxi]
        d_w = [zeros, dxd_dw]

    def row_jac(k):
        """Jacobians of local row k w.r.t. xi_j, w_j, w_i."""
        Jxi = sum(Om[..., k, c, None, None] * d_xi[c] for c in range(n))
        Jw = sum(Om[..., k, c, None, None] * d_w[c] for c in range(n))
        Jwi = La[..., k, 1, None, None] * eye
        return Jxi, Jw, Jwi

    A0, B0, C0 = row_jac(0)
    A1, B1, C1 = row_jac(1)
    dxi_di = gather(-lie.left_jacobian_inv_se3(xi_p))
    dxi_dj = gather(lie.right_jacobian_inv_se3(xi_p))

    # pose: delta_t = Ad(exp(-xi_t)) delta_i + Jr(xi_t) d xi_t
    Ad = lie.adjoint(lie.pose_inverse(E_t))
    Jr = lie.right_jacobian_se3(xi_t)
    # velocity: d w_t = M_t^-1 (d xd_t + D_inv(-xi_t, w_t) d xi_t)
    Minv = np.linalg.inv(M_t)
    G = -inv_jac_directional(xi_t, w_t, mode)

    def vel(dxd, dxi):
        return Minv @ (dxd + G @ dxi)

    J = {
        "pose_i": np.concatenate([Ad + Jr @ A0 @ dxi_di, vel(A1 @ dxi_di, A0 @ dxi_di)], axis=-2),
        "pose_j": np.concatenate([Jr @ A0 @ dxi_dj, vel(A1 @ dxi_dj, A0 @ dxi_dj)], axis=-2),
        "vel_i": np.concatenate([Jr @ C0, vel(C1, C0)], axis=-2),
        "vel_j": np.concatenate([Jr @ B0, vel(B1, B0)], axis=-2),
    }
    return T_t, w_t, J
