from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctfgo import lie


def _series_left_jacobian(xi, terms=40):
    A = lie.curlywedge(xi)
    out = np.zeros((6, 6))
    P = np.eye(6)
    fact = 1.0
    for n in range(terms):
        fact *= n + 1
        out += P / fact
        P = P @ A
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_exp_zero_is_identity():
    assert np.array_equal(lie.exp_se3(np.zeros(6)), np.eye(4))


def test_exp_pure_translation():
    T = lie.exp_se3(np.array([1.0, 0, 0, 0, 0, 0]))
    np.testing.assert_allclose(T[:3, 3], [1, 0, 0])
    np.testing.assert_allclose(T[:3, :3], np.eye(3))


def test_exp_matches_matrix_exponential(rng):
    for _ in range(20):
        xi = rng.normal(size=6)
        np.testing.assert_allclose(lie.exp_se3(xi), scipy.linalg.expm(lie.hat(xi)), atol=1e-12)


def test_exp_log_round_trip(rng):
    for _ in range(100):
        xi = rng.normal(size=6) * [5, 5, 5, 1, 1, 1]
        theta = np.linalg.norm(xi[3:])
        if theta > np.pi - 0.1:
            xi[3:] *= (np.pi - 0.1) / theta
        T = lie.exp_se3(xi)
        np.testing.assert_allclose(lie.exp_se3(lie.log_se3(T)), T, atol=1e-10)
        np.testing.assert_allclose(lie.log_se3(T), xi, atol=1e-10)


@pytest.mark.parametrize("angle", [0.0, 1e-12, 1e-9, 1e-6, 1e-3, 0.049, 0.051, 0.5, 3.0])
def test_round_trip_across_series_threshold(angle, rng):
    xi = rng.normal(size=6)
    xi[3:] *= angle / np.linalg.norm(xi[3:])
    np.testing.assert_allclose(lie.log_se3(lie.exp_se3(xi)), xi, atol=1e-12)
    np.testing.assert_allclose(lie.left_jacobian_se3(xi), _series_left_jacobian(xi), atol=1e-12)


def test_log_near_pi_raises():
    R = lie.so3_exp(np.array([0.0, 0.0, np.pi - 1e-8]))
    with pytest.raises(lie.NearPiRotation):
        lie.log_se3(lie.make_pose(R, np.zeros(3)))


def test_curlywedge_examples():
    assert np.array_equal(lie.adjoint_curlywedge(np.zeros(6)), np.zeros((6, 6)))
    C = lie.adjoint_curlywedge(np.array([0, 0, 0, 0, 0, 1.0]))
    S = lie.skew([0, 0, 1.0])
    np.testing.assert_array_equal(C[:3, :3], S)
    np.testing.assert_array_equal(C[3:, 3:], S)
    np.testing.assert_array_equal(C[:3, 3:], np.zeros((3, 3)))


def test_curlywedge_annihilates_own_twist(rng):
    xi = rng.normal(size=(50, 6))
    out = np.einsum("nij,nj->ni", lie.curlywedge(xi), xi)
    np.testing.assert_allclose(out, 0.0, atol=1e-14)


def test_adjoint_of_exp_equals_exp_of_curlywedge(rng):
    for _ in range(20):
        xi = rng.normal(size=6)
        xi *= rng.uniform(0, 1) / np.linalg.norm(xi)
        np.testing.assert_allclose(lie.adjoint(lie.exp_se3(xi)), scipy.linalg.expm(lie.curlywedge(xi)), atol=1e-8)


def test_left_jacobian_inverse(rng):
    for _ in range(100):
        xi = rng.normal(size=6)
        xi[3:] *= rng.uniform(0, 2) / np.linalg.norm(xi[3:])
        J = lie.left_jacobian_se3(xi)
        np.testing.assert_allclose(J @ lie.left_jacobian_inv_se3(xi), np.eye(6), atol=1e-9)


@pytest.mark.parametrize("mode", ["exact", "approx", "identity"])
def test_jacobians_at_zero_are_identity(mode):
    np.testing.assert_array_equal(lie.left_jacobian_inv_se3(np.zeros(6), mode), np.eye(6))
    np.testing.assert_array_equal(lie.left_jacobian_se3(np.zeros(6)), np.eye(6))


def test_approx_inverse_jacobian_error_is_second_order(rng):
    # series oracle: Jl^-1 = I - A/2 + A^2/12 - A^4/720 + ..., so the
    # truncation error is A^2/12 to leading order
    for _ in range(200):
        xi = rng.normal(size=6)
        xi *= rng.uniform(0, 0.3) / np.linalg.norm(xi)
        A = lie.curlywedge(xi)
        err = np.linalg.norm(lie.left_jacobian_inv_se3(xi, "approx") - lie.left_jacobian_inv_se3(xi), 2)
        assert err <= 1.01 * np.linalg.norm(A, 2) ** 2 / 12 + 1e-15


def test_approx_inverse_jacobian_pure_rotation_error():
    xi = np.array([0, 0, 0, 0, 0, 0.2])
    err = np.linalg.norm(lie.left_jacobian_inv_se3(xi, "approx") - lie.left_jacobian_inv_se3(xi), 2)
    np.testing.assert_allclose(err, 0.04 / 12, rtol=1e-3)


def test_left_jacobian_relates_exp_perturbations(rng):
    # exp(xi + d) ~ exp(J d) exp(xi)
    xi = rng.normal(size=6)
    d = rng.normal(size=6) * 1e-7
    lhs = lie.exp_se3(xi + d)
    rhs = lie.exp_se3(lie.left_jacobian_se3(xi) @ d) @ lie.exp_se3(xi)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    rhs_r = lie.exp_se3(xi) @ lie.exp_se3(lie.right_jacobian_se3(xi) @ d)
    np.testing.assert_allclose(lhs, rhs_r, atol=1e-12)


@pytest.mark.parametrize("scale", [1e-4, 0.3, 2.0])
def test_directional_derivatives_match_finite_differences(scale, rng):
    h = 1e-6
    for _ in range(5):
        xi = rng.normal(size=6) * scale
        w = rng.normal(size=6)
        for fun, dfun in [
            (lie.left_jacobian_se3, lie.left_jacobian_directional),
            (lie.left_jacobian_inv_se3, lie.left_jacobian_inv_directional),
        ]:
            num = np.stack([(fun(xi + h * e) @ w - fun(xi - h * e) @ w) / (2 * h) for e in np.eye(6)], axis=1)
            np.testing.assert_allclose(dfun(xi, w), num, atol=1e-7)


def test_batched_matches_single(rng):
    xi = rng.normal(size=(4, 3, 6))
    T = lie.exp_se3(xi)
    for idx in np.ndindex(4, 3):
        np.testing.assert_allclose(T[idx], lie.exp_se3(xi[idx]), atol=1e-15)


def test_composition_associative(rng):
    for _ in range(20):
        A, B, C = (lie.exp_se3(rng.normal(size=6)) for _ in range(3))
        np.testing.assert_allclose((A @ B) @ C, A @ (B @ C), atol=1e-12)


def test_long_chain_stays_orthonormal(rng):
    steps = lie.exp_se3(rng.normal(size=(10000, 6)) * 0.1)
    T = lie.compose_chain(steps)
    R = T[:3, :3]
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-2.0, 2.0)))
def test_log_inverts_exp_property(xi):
    if np.linalg.norm(xi[3:]) > np.pi - 0.1:
        return
    np.testing.assert_allclose(lie.log_se3(lie.exp_se3(xi)), xi, atol=1e-10)
