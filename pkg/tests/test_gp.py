from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from ctfgo import gp, lie

MODELS = ["wnoa", "wnoj"]


def van_loan(dt, qc, order):
    """Oracle: discretize the integrator-chain SDE with a matrix exponential."""
    n = 6 * order
    F = np.zeros((n, n))
    for k in range(order - 1):
        F[6 * k : 6 * k + 6, 6 * k + 6 : 6 * k + 12] = np.eye(6)
    L = np.zeros((n, 6))
    L[-6:] = np.eye(6)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -F
    M[:n, n:] = L @ np.diag(qc) @ L.T
    M[n:, n:] = F.T
    E = scipy.linalg.expm(M * dt)
    Phi = E[n:, n:].T
    return Phi, Phi @ E[:n, n:]


def dense_conditioning(dt, tau, qc, order):
    """Oracle: condition the joint Gaussian of (gamma(tau), gamma(dt)) given gamma(0)."""
    P1, Q1 = van_loan(tau, qc, order)
    P2, Q2 = van_loan(dt - tau, qc, order)
    C11 = Q1
    C12 = Q1 @ P2.T
    C22 = P2 @ Q1 @ P2.T + Q2
    Om = np.linalg.solve(C22.T, C12.T).T
    La = P1 - Om @ (P2 @ P1)
    return La, Om


def test_transition_limits_and_blocks():
    np.testing.assert_array_equal(gp.make_transition(0.0, "wnoj"), np.eye(18))
    np.testing.assert_array_equal(gp.make_transition(2.0, "wnoj")[0:6, 12:18], 2.0 * np.eye(6))
    np.testing.assert_array_equal(gp.make_transition(2.0, "wnoa"), np.block([[np.eye(6), 2 * np.eye(6)], [np.zeros((6, 6)), np.eye(6)]]))


@pytest.mark.parametrize("model", MODELS)
def test_transition_semigroup(model):
    rng = np.random.default_rng(0)
    for a, b in rng.uniform(0, 5, size=(20, 2)):
        np.testing.assert_allclose(gp.make_transition(a, model) @ gp.make_transition(b, model), gp.make_transition(a + b, model), atol=1e-12)


def test_nonpositive_dt():
    with pytest.raises(gp.NonPositiveDt):
        gp.make_q(0.0, np.ones(6))
    with pytest.raises(gp.NonPositiveDt):
        gp.make_transition(-1.0)


def test_q_leading_block():
    Q, _ = gp.make_q(1.0, np.ones(6), "wnoj")
    np.testing.assert_allclose(Q[:6, :6], np.eye(6) / 20)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("dt", [0.01, 0.1, 1.0, 10.0])
def test_q_inverse_and_spd(model, dt):
    rng = np.random.default_rng(1)
    qc = rng.uniform(0.1, 10, 6)
    Q, Qi = gp.make_q(dt, qc, model)
    n = Q.shape[0]
    assert np.max(np.abs(Q @ Qi - np.eye(n))) < 1e-8
    np.testing.assert_array_equal(Q, Q.T)
    assert np.min(np.linalg.eigvalsh(Q)) > 0


@pytest.mark.parametrize("model,order", [("wnoa", 2), ("wnoj", 3)])
def test_q_matches_van_loan(model, order):
    qc = np.array([0.5, 1, 2, 3, 4, 5.0])
    for dt in (0.1, 1.0, 3.0):
        Phi, Q = van_loan(dt, qc, order)
        np.testing.assert_allclose(gp.make_transition(dt, model), Phi, atol=1e-12)
        np.testing.assert_allclose(gp.make_q(dt, qc, model)[0], Q, rtol=1e-9, atol=1e-14)


@pytest.mark.parametrize("model", MODELS)
def test_interpolation_endpoints(model):
    n = 12 if model == "wnoa" else 18
    for dt in (1e-3, 0.1, 1.0, 10.0):
        La, Om = gp.interpolation_matrices(0.0, dt, 0.0, model)
        np.testing.assert_allclose(La, np.eye(n), atol=1e-9)
        np.testing.assert_allclose(Om, 0.0, atol=1e-9)
        La, Om = gp.interpolation_matrices(0.0, dt, dt, model)
        np.testing.assert_allclose(La, 0.0, atol=1e-9)
        np.testing.assert_allclose(Om, np.eye(n), atol=1e-9)


@pytest.mark.parametrize("model,order", [("wnoa", 2), ("wnoj", 3)])
def test_interpolation_matches_dense_conditioning(model, order):
    La, Om = gp.interpolation_matrices(0.0, 1.0, 0.5, model)
    La_o, Om_o = dense_conditioning(1.0, 0.5, np.ones(6), order)
    np.testing.assert_allclose(La, La_o, atol=1e-9)
    np.testing.assert_allclose(Om, Om_o, atol=1e-9)
    # qc cancels
    La_o, Om_o = dense_conditioning(1.0, 0.3, np.array([0.1, 1, 10, 2, 3, 0.5]), order)
    La, Om = gp.interpolation_matrices(0.0, 1.0, 0.3, model)
    np.testing.assert_allclose(La, La_o, atol=1e-8)
    np.testing.assert_allclose(Om, Om_o, atol=1e-8)


def test_query_out_of_segment():
    with pytest.raises(gp.QueryOutOfSegment):
        gp.interpolation_matrices(0.0, 1.0, 1.5)


def test_lift_zero_motion():
    gi, gj = gp.lift_to_local(np.eye(4), np.zeros(6), np.zeros(6), np.eye(4), np.zeros(6), np.zeros(6))
    np.testing.assert_array_equal(gi, 0.0)
    np.testing.assert_array_equal(gj, 0.0)


def test_lift_constant_body_velocity():
    w = np.array([1.0, 0, 0, 0, 0, 0])
    Tj = lie.exp_se3(w * 1.0)
    _, gj = gp.lift_to_local(np.eye(4), w, np.zeros(6), Tj, w, np.zeros(6))
    np.testing.assert_allclose(gj[:6], [1, 0, 0, 0, 0, 0], atol=1e-15)


def test_lift_velocity_matches_central_differences():
    c1 = np.array([1.0, -0.5, 0.2, 0.1, -0.3, 0.2])
    c2 = np.array([0.3, 0.1, -0.2, 0.05, 0.1, -0.08])

    def xi(t):
        return c1 * t + c2 * t * t

    t, h = 0.7, 1e-5
    # body velocity of T(t) = exp(xi(t)) is Jr(xi) xi_dot
    w = lie.right_jacobian_se3(xi(t)) @ (c1 + 2 * c2 * t)
    _, gj = gp.lift_to_local(np.eye(4), np.zeros(6), np.zeros(6), lie.exp_se3(xi(t)), w, np.zeros(6))
    fd = (lie.log_se3(lie.exp_se3(xi(t + h))) - lie.log_se3(lie.exp_se3(xi(t - h)))) / (2 * h)
    np.testing.assert_allclose(gj[6:12], fd, atol=1e-8)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("mode", ["exact", "approx", "identity"])
def test_query_endpoints_exact(model, mode):
    rng = np.random.default_rng(4)
    Ti = lie.exp_se3(rng.normal(size=6))
    Tj = Ti @ lie.exp_se3(rng.normal(size=6) * 0.5)
    wi, wj, ai, aj = rng.normal(size=(4, 6))
    for dt in (1e-3, 0.1, 10.0):
        T0, w0, _ = gp.query(Ti, wi, ai, Tj, wj, aj, dt, 0.0, model, mode)
        T1, w1, _ = gp.query(Ti, wi, ai, Tj, wj, aj, dt, dt, model, mode)
        assert np.linalg.norm(lie.log_se3(lie.pose_inverse(Ti) @ T0)) < 1e-9
        assert np.linalg.norm(lie.log_se3(lie.pose_inverse(Tj) @ T1)) < 1e-9
        np.testing.assert_allclose(w0, wi, atol=1e-9)
        np.testing.assert_allclose(w1, wj, atol=1e-9)


@pytest.mark.parametrize("model", MODELS)
def test_query_straight_line(model):
    w = np.array([2.0, 0, 0, 0, 0, 0])
    Ti = lie.exp_se3(np.array([5.0, 1, 2, 0.1, 0.2, 0.3]))
    Tj = Ti @ lie.exp_se3(w)
    T, v, _ = gp.query(Ti, w, np.zeros(6), Tj, w, np.zeros(6), 1.0, 0.5, model)
    np.testing.assert_allclose(T, Ti @ lie.exp_se3(np.array([1.0, 0, 0, 0, 0, 0])), atol=1e-6)
    np.testing.assert_allclose(v, w, atol=1e-9)


@pytest.mark.parametrize("model", MODELS)
def test_query_continuous(model):
    rng = np.random.default_rng(5)
    Ti = lie.exp_se3(rng.normal(size=6))
    Tj = Ti @ lie.exp_se3(rng.normal(size=6) * 0.3)
    wi, wj, ai, aj = rng.normal(size=(4, 6))
    for tau in (0.1, 0.5, 0.9):
        Ta, _, _ = gp.query(Ti, wi, ai, Tj, wj, aj, 1.0, tau, model, jacobians=False)
        Tb, _, _ = gp.query(Ti, wi, ai, Tj, wj, aj, 1.0, tau + 1e-9, model, jacobians=False)
        assert np.linalg.norm(lie.log_se3(lie.pose_inverse(Ta) @ Tb)) < 1e-6


def _perturbed(args, name, vec):
    out = dict(args)
    out[name] = out[name] @ lie.exp_se3(vec) if name.startswith("T") else out[name] + vec
    return out


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("mode", ["exact", "approx", "identity"])
def test_query_and_prior_jacobians_match_finite_differences(model, mode):
    rng = np.random.default_rng(11)
    h = 1e-6
    keys = [("pose_i", "T_i"), ("pose_j", "T_j"), ("vel_i", "w_i"), ("vel_j", "w_j")]
    for _ in range(50):
        Ti = lie.exp_se3(rng.normal(size=6) * 3)
        Tj = Ti @ lie.exp_se3(rng.normal(size=6) * 0.4)
        args = dict(T_i=Ti, w_i=rng.normal(size=6), wd_i=rng.normal(size=6), T_j=Tj, w_j=rng.normal(size=6), wd_j=rng.normal(size=6))
        dt = rng.uniform(0.05, 1.0)
        tau = rng.uniform(0.05, 0.95) * dt

        def q(a):
            T, w, _ = gp.query(a["T_i"], a["w_i"], a["wd_i"], a["T_j"], a["w_j"], a["wd_j"], dt, tau, model, mode, jacobians=False)
            return T, w

        def prior(a):
            return gp.prior_residual(a["T_i"], a["w_i"], a["wd_i"], a["T_j"], a["w_j"], dt, model, mode)[0]

        T0, _, Jq = gp.query(**args, dt=dt, tau=tau, model=model, mode=mode)
        _, Jp = gp.prior_residual(args["T_i"], args["w_i"], args["wd_i"], args["T_j"], args["w_j"], dt, model, mode)
        for key, name in keys:
            num_q = np.zeros((12, 6))
            num_p = np.zeros((12, 6))
            for c in range(6):
                e = np.zeros(6)
                e[c] = h
                (Tp, wp), (Tm, wm) = q(_perturbed(args, name, e)), q(_perturbed(args, name, -e))
                num_q[:6, c] = (lie.log_se3(lie.pose_inverse(T0) @ Tp) - lie.log_se3(lie.pose_inverse(T0) @ Tm)) / (2 * h)
                num_q[6:, c] = (wp - wm) / (2 * h)
                num_p[:, c] = (prior(_perturbed(args, name, e)) - prior(_perturbed(args, name, -e))) / (2 * h)
            for ana, num in ((Jq[key], num_q), (Jp[key], num_p)):
                assert np.all(np.abs(ana - num) <= np.maximum(1e-4, 1e-5 * np.abs(num)))


@pytest.mark.parametrize("model", MODELS)
def test_prior_zero_on_constant_velocity(model):
    w = np.array([3.0, 0.5, -0.2, 0.1, -0.2, 0.3])
    Ti = lie.exp_se3(np.array([1.0, 2, 3, 0.3, 0.2, 0.1]))
    Tj = Ti @ lie.exp_se3(0.5 * w)
    r, _ = gp.prior_residual(Ti, w, np.zeros(6), Tj, w, 0.5, model)
    np.testing.assert_allclose(r, 0.0, atol=1e-10)


def test_prior_constant_acceleration():
    a = np.array([1.0, 0, 0, 0, 0, 0])
    Tj = lie.exp_se3(0.5 * a)
    r, _ = gp.prior_residual(np.eye(4), np.zeros(6), a, Tj, a * 1.0, 1.0, "wnoj")
    np.testing.assert_allclose(r, 0.0, atol=1e-8)
    r, _ = gp.prior_residual(np.eye(4), np.zeros(6), a, Tj, a * 1.0, 1.0, "wnoa")
    assert np.linalg.norm(r) > 0.1


@pytest.mark.parametrize("model", MODELS)
def test_prior_cost_left_invariant(model):
    rng = np.random.default_rng(9)
    Ti = lie.exp_se3(rng.normal(size=6))
    Tj = Ti @ lie.exp_se3(rng.normal(size=6) * 0.2)
    wi, wj, ai = rng.normal(size=(3, 6))
    G = lie.exp_se3(rng.normal(size=6) * 10)
    info = np.linalg.inv(gp.prior_covariance(0.1, np.ones(6), model))
    r1, _ = gp.prior_residual(Ti, wi, ai, Tj, wj, 0.1, model)
    r2, _ = gp.prior_residual(G @ Ti, wi, ai, G @ Tj, wj, 0.1, model)
    np.testing.assert_allclose(r1 @ info @ r1, r2 @ info @ r2, rtol=1e-9)


def test_prior_covariance_is_pose_velocity_block():
    Q, _ = gp.make_q(0.2, np.ones(6), "wnoj")
    np.testing.assert_array_equal(gp.prior_covariance(0.2, np.ones(6), "wnoj"), Q[:12, :12])
    seg = gp.GpSegment(0.0, 0.2, np.ones(6), "wnoj")
    assert seg.prior_covariance.shape == (12, 12)
    np.testing.assert_allclose(seg.q @ seg.q_inv, np.eye(18), atol=1e-8)


@pytest.mark.parametrize("model", MODELS)
def test_query_pair_index_matches_expanded_batch(model):
    rng = np.random.default_rng(8)
    n_seg = 3
    Ti = lie.exp_se3(rng.normal(size=(n_seg, 6)))
    Tj = Ti @ lie.exp_se3(rng.normal(size=(n_seg, 6)) * 0.3)
    wi, wj, ai, aj = rng.normal(size=(4, n_seg, 6))
    idx = np.array([0, 2, 2, 1, 0, 2])
    tau = rng.uniform(0.0, 0.1, idx.size)
    Ta, wa, Ja = gp.query(Ti, wi, ai, Tj, wj, aj, 0.1, tau, model, pair_index=idx)
    Tb, wb, Jb = gp.query(Ti[idx], wi[idx], ai[idx], Tj[idx], wj[idx], aj[idx], 0.1, tau, model)
    np.testing.assert_allclose(Ta, Tb, atol=1e-12)
    np.testing.assert_allclose(wa, wb, atol=1e-12)
    for k in Jb:
        np.testing.assert_allclose(Ja[k], Jb[k], atol=1e-10)
