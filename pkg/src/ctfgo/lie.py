"""SO(3) and SE(3) group/algebra operations.

Every function broadcasts over leading batch dimensions, so ``exp_se3`` accepts
a single twist of shape ``(6,)`` or a stack ``(N, 6)`` alike.

Conventions
-----------
* Twists are ordered ``xi = [rho, phi]`` (translation first).
* Poses are homogeneous ``(4, 4)`` matrices.
* ``curlywedge(xi)`` is the 6x6 adjoint of ``xi^``: ``[[phi^, rho^], [0, phi^]]``.
* ``adjoint(exp_se3(xi)) == expm(curlywedge(xi))``.
"""

from __future__ import annotations

import numpy as np

# Below this angle the closed-form coefficients lose precision to cancellation;
# the Taylor branches are exact to double precision up to it.
SERIES_ANGLE = 0.05
NEAR_PI_MARGIN = 1e-6
REORTHO_INTERVAL = 1000


class NearPiRotation(ValueError):
    """Rotation angle too close to pi for a unique principal logarithm."""


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee3(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _angle(phi: np.ndarray):
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    return theta, small, safe


def _series(t2: np.ndarray, coeffs) -> np.ndarray:
    out = np.zeros_like(t2)
    for c in reversed(coeffs):
        out = out * t2 + c
    return out


def _coeff_a(theta, small, safe):
    # sin(t)/t
    t2 = theta * theta
    return np.where(small, _series(t2, [1.0, -1 / 6, 1 / 120, -1 / 5040, 1 / 362880]), np.sin(safe) / safe)


def _coeff_b(theta, small, safe):
    # (1 - cos t)/t^2
    t2 = theta * theta
    return np.where(
        small,
        _series(t2, [0.5, -1 / 24, 1 / 720, -1 / 40320, 1 / 3628800]),
        (1.0 - np.cos(safe)) / safe**2,
    )


def _coeff_c(theta, small, safe):
    # (t - sin t)/t^3
    t2 = theta * theta
    return np.where(
        small,
        _series(t2, [1 / 6, -1 / 120, 1 / 5040, -1 / 362880, 1 / 39916800]),
        (safe - np.sin(safe)) / safe**3,
    )


def _coeff_d(theta, small, safe):
    # (t^2 + 2 cos t - 2)/(2 t^4)
    t2 = theta * theta
    return np.where(
        small,
        _series(t2, [1 / 24, -1 / 720, 1 / 40320, -1 / 3628800, 1 / 479001600]),
        (safe**2 + 2.0 * np.cos(safe) - 2.0) / (2.0 * safe**4),
    )


def _coeff_e(theta, small, safe):
    # (2t - 3 sin t + t cos t)/(2 t^5)
    t2 = theta * theta
    return np.where(
        small,
        _series(t2, [1 / 120, -1 / 2520, 1 / 120960, -1 / 9979200, 1 / 1245404160]),
        (2.0 * safe - 3.0 * np.sin(safe) + safe * np.cos(safe)) / (2.0 * safe**5),
    )


def _coeff_jinv(theta, small, safe):
    # 1/t^2 - (1 + cos t)/(2 t sin t)
    t2 = theta * theta
    return np.where(
        small,
        _series(t2, [1 / 12, 1 / 720, 1 / 30240, 1 / 1209600, 1 / 47900160]),
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )


# ---------------------------------------------------------------------------
# SO(3)


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe = _angle(phi)
    K = skew(phi)
    a = _coeff_a(theta, small, safe)[..., None, None]
    b = _coeff_b(theta, small, safe)[..., None, None]
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * vee3(R - np.swapaxes(R, -1, -2))
    sin_t = np.linalg.norm(s, axis=-1)
    theta = np.arctan2(sin_t, cos_t)
    if np.any(theta > np.pi - NEAR_PI_MARGIN):
        raise NearPiRotation(f"rotation angle {np.max(theta):.9f} rad too close to pi")
    small = theta < SERIES_ANGLE
    safe_sin = np.where(small, 1.0, sin_t)
    t2 = theta * theta
    scale = np.where(small, _series(t2, [1.0, 1 / 6, 7 / 360, 31 / 15120, 127 / 604800]), theta / safe_sin)
    return scale[..., None] * s


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe = _angle(phi)
    K = skew(phi)
    b = _coeff_b(theta, small, safe)[..., None, None]
    c = _coeff_c(theta, small, safe)[..., None, None]
    return np.eye(3) + b * K + c * (K @ K)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe = _angle(phi)
    K = skew(phi)
    k = _coeff_jinv(theta, small, safe)[..., None, None]
    return np.eye(3) - 0.5 * K + k * (K @ K)


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    return so3_left_jacobian(-np.asarray(phi, dtype=float))


def so3_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(phi, dtype=float))


def reorthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.ones(np.shape(R)[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


# ---------------------------------------------------------------------------
# SE(3)


def hat(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (4, 4))
    out[..., :3, :3] = skew(xi[..., 3:])
    out[..., :3, 3] = xi[..., :3]
    return out


def curlywedge(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    P = skew(xi[..., 3:])
    out[..., :3, :3] = P
    out[..., 3:, 3:] = P
    out[..., :3, 3:] = skew(xi[..., :3])
    return out


adjoint_curlywedge = curlywedge


def make_pose(R: np.ndarray, p: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float)
    shape = np.broadcast_shapes(R.shape[:-2], p.shape[:-1])
    T = np.zeros(shape + (4, 4))
    T[..., :3, :3] = R
    T[..., :3, 3] = p
    T[..., 3, 3] = 1.0
    return T


def pose_inverse(T: np.ndarray) -> np.ndarray:
    R = T[..., :3, :3]
    Rt = np.swapaxes(R, -1, -2)
    return make_pose(Rt, -np.einsum("...ij,...j->...i", Rt, T[..., :3, 3]))


def adjoint(T: np.ndarray) -> np.ndarray:
    R = T[..., :3, :3]
    out = np.zeros(T.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = skew(T[..., :3, 3]) @ R
    return out


def _q_matrix(xi: np.ndarray) -> np.ndarray:
    rho, phi = xi[..., :3], xi[..., 3:]
    theta, small, safe = _angle(phi)
    P = skew(phi)
    Rh = skew(rho)
    c = _coeff_c(theta, small, safe)[..., None, None]
    d = _coeff_d(theta, small, safe)[..., None, None]
    e = _coeff_e(theta, small, safe)[..., None, None]
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    PP = P @ P
    return (
        0.5 * Rh
        + c * (PR + RP + PRP)
        + d * (PP @ Rh + RP @ P - 3.0 * PRP)
        + e * (PRP @ P + PP @ Rh @ P)
    )


def exp_se3(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    R = so3_exp(xi[..., 3:])
    J = so3_left_jacobian(xi[..., 3:])
    return make_pose(R, np.einsum("...ij,...j->...i", J, xi[..., :3]))


def log_se3(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    phi = so3_log(T[..., :3, :3])
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(phi), T[..., :3, 3])
    return np.concatenate([rho, phi], axis=-1)


def left_jacobian_se3(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    J = so3_left_jacobian(xi[..., 3:])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., :3, 3:] = _q_matrix(xi)
    return out


def left_jacobian_inv_se3(xi: np.ndarray, mode: str = "exact") -> np.ndarray:
    """Inverse left Jacobian of SE(3).

    ``mode="approx"`` returns ``I - curlywedge(xi)/2`` and ``mode="identity"``
    the identity; both are cheap stand-ins valid for short intervals.
    """
    xi = np.asarray(xi, dtype=float)
    if mode == "identity":
        return np.broadcast_to(np.eye(6), xi.shape[:-1] + (6, 6)).copy()
    if mode == "approx":
        return np.eye(6) - 0.5 * curlywedge(xi)
    if mode != "exact":
        raise ValueError(f"unknown jacobian mode {mode!r}")
    Ji = so3_left_jacobian_inv(xi[..., 3:])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ji
    out[..., 3:, 3:] = Ji
    out[..., :3, 3:] = -Ji @ _q_matrix(xi) @ Ji
    return out


def right_jacobian_se3(xi: np.ndarray) -> np.ndarray:
    return left_jacobian_se3(-np.asarray(xi, dtype=float))


def right_jacobian_inv_se3(xi: np.ndarray, mode: str = "exact") -> np.ndarray:
    return left_jacobian_inv_se3(-np.asarray(xi, dtype=float), mode)


def left_jacobian_directional(xi: np.ndarray, w: np.ndarray, tol: float = 1e-18) -> np.ndarray:
    """Derivative of ``left_jacobian_se3(xi) @ w`` with respect to ``xi``.

    Uses ``J(xi) w = sum_n A^n w / (n+1)!`` with ``A = curlywedge(xi)``; the
    double sum of the term-wise derivative collapses to
    ``-sum_m F_m curlywedge(A^m w)`` with ``F_m = sum_j A^j / (m+j+2)!``,
    evaluated with a backward Horner recursion.
    """
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    xi, w = np.broadcast_arrays(xi, w)
    A = curlywedge(xi)
    theta = float(np.max(np.linalg.norm(xi[..., 3:], axis=-1), initial=0.0))
    scale = max(1.0, float(np.max(np.linalg.norm(xi, axis=-1), initial=0.0)))
    scale *= max(1.0, float(np.max(np.linalg.norm(w, axis=-1), initial=0.0)))
    # truncation: ~ scale * theta^n / n!
    n_terms, term = 2, scale
    while n_terms < 80:
        term *= max(theta, 1e-3) / n_terms
        if term < tol:
            break
        n_terms += 1
    n_terms += 2
    powers = [w]
    for _ in range(n_terms - 1):
        powers.append(np.einsum("...ij,...j->...i", A, powers[-1]))
    fact = [1.0]
    for k in range(1, n_terms + 3):
        fact.append(fact[-1] * k)
    eye = np.eye(6)
    F = eye / fact[n_terms + 1]
    out = -F @ curlywedge(powers[n_terms - 1])
    for m in range(n_terms - 2, -1, -1):
        F = eye / fact[m + 2] + A @ F
        out = out - F @ curlywedge(powers[m])
    return out


def left_jacobian_inv_directional(xi: np.ndarray, w: np.ndarray, mode: str = "exact") -> np.ndarray:
    """Derivative of ``left_jacobian_inv_se3(xi, mode) @ w`` with respect to ``xi``."""
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    shape = np.broadcast_shapes(xi.shape, w.shape)[:-1]
    if mode == "identity":
        return np.zeros(shape + (6, 6))
    if mode == "approx":
        return np.broadcast_to(0.5 * curlywedge(w), shape + (6, 6)).copy()
    Ji = left_jacobian_inv_se3(xi)
    u = np.einsum("...ij,...j->...i", Ji, w)
    return -Ji @ left_jacobian_directional(xi, u)


def compose_chain(poses, reortho_every: int = REORTHO_INTERVAL) -> np.ndarray:
    """Compose a sequence of poses left to right with periodic re-orthonormalization."""
    T = np.eye(4)
    for k, X in enumerate(poses, start=1):
        T = T @ X
        if k % reortho_every == 0:
            T[:3, :3] = reorthonormalize(T[:3, :3])
    return T
