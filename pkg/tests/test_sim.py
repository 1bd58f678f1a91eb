from __future__ import annotations

import numpy as np
import pytest

from ctfgo import geodesy, lie
from ctfgo.factors import between_pose_residual, imu, preintegrate, prdo_residual, pvt_residual, velocity2d_residual
from ctfgo.sim import (
    Scenario,
    ScenarioError,
    SegmentTrajectory,
    SplineTrajectory,
    bundled_scenario_path,
    load_scenario,
    scenario_from_dict,
    synth_gnss_epoch,
    synth_imu,
    synth_odometry,
    synth_pvt,
    synth_speed,
    synthesize,
    visible_constellation,
)
from ctfgo.sim.sensors import cn0_lambda

ORIGIN = np.array([0.88, 0.11, 150.0])


def _straight(nu=(10.0, 0.0, 0.0), omega=(0.0, 0.0, 0.0), accel=(0.0, 0.0, 0.0), duration=20.0):
    return SegmentTrajectory(ORIGIN, 0.3, nu, [dict(duration=duration, omega=omega, accel=accel)])


def _scenario(**overrides):
    base = {"duration": 10.0, "seed": 5}
    base.update(overrides)
    return scenario_from_dict(base)


# ---------------------------------------------------------------------------
# trajectories


def test_constant_twist_translation():
    tr = _straight()
    T, _, _ = tr.state([0.0, 2.0])
    rel = lie.pose_inverse(T[0]) @ T[1]
    np.testing.assert_allclose(rel[:3, 3], [20.0, 0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(rel[:3, :3], np.eye(3), atol=1e-12)


def test_circular_arc_has_constant_speed():
    tr = _straight(omega=(0.0, 0.0, 0.1))
    t = np.linspace(0.0, 20.0, 41)
    T, w, _ = tr.state(t)
    h = 1e-4
    Tp, _, _ = tr.state(t + h)
    Tm, _, _ = tr.state(t - h)
    speed = np.linalg.norm((Tp[:, :3, 3] - Tm[:, :3, 3]) / (2 * h), axis=-1)
    np.testing.assert_allclose(speed, 10.0, atol=1e-5)
    np.testing.assert_allclose(np.linalg.norm(w[:, :3], axis=-1), 10.0)


def _fd_twist(tr, t, h):
    T, _, _ = tr.state(np.array([t - h, t, t + h]))
    fwd = lie.log_se3(lie.pose_inverse(T[1]) @ T[2])
    bwd = lie.log_se3(lie.pose_inverse(T[1]) @ T[0])
    return (fwd - bwd) / (2 * h)


@pytest.mark.parametrize(
    "tr",
    [
        _straight(omega=(0.02, -0.03, 0.1), accel=(0.7, 0.1, -0.2)),
        SegmentTrajectory(ORIGIN, 1.0, (8.0, 0.0, 0.0), [dict(duration=5.0, omega=(0, 0, 0.2)), dict(duration=5.0, accel=(1, 0, 0))]),
        SplineTrajectory(ORIGIN, np.arange(8) * 3.0, [[10 * k + (k % 2) * 3, 25 * np.sin(0.3 * k) + 5 * k, 0.2 * k] for k in range(8)]),
    ],
    ids=["screw", "segments", "spline"],
)
def test_twist_matches_pose_finite_differences(tr):
    for t in (1.3, 3.7, 7.1):
        _, w, wd = tr.state(np.array([t]))
        errs = []
        for h in (1e-2, 5e-3):
            errs.append(np.max(np.abs(_fd_twist(tr, t, h) - w[0])))
        # central differences are O(h^2): halving h cuts the error about 4x
        # until ECEF rounding (~1e-7 here) takes over
        assert errs[1] < 1e-4
        assert errs[1] <= errs[0] / 3.0 + 1e-7
        h = 1e-5
        wp = tr.state(np.array([t + h]))[1][0]
        wm = tr.state(np.array([t - h]))[1][0]
        np.testing.assert_allclose((wp - wm) / (2 * h), wd[0], atol=1e-5)


def test_spline_is_c2():
    times = np.arange(8) * 3.0
    pts = [[10 * k, 20 * np.sin(0.4 * k) + 4 * k, 0.0] for k in range(8)]
    tr = SplineTrajectory(ORIGIN, times, pts)
    knot = 9.0
    eps = 1e-7
    _, w_l, wd_l = tr.state(np.array([knot - eps]))
    _, w_r, wd_r = tr.state(np.array([knot + eps]))
    np.testing.assert_allclose(w_l, w_r, atol=1e-5)
    np.testing.assert_allclose(wd_l, wd_r, atol=1e-5)


# ---------------------------------------------------------------------------
# IMU


class _Stationary:
    def __init__(self, T):
        self.T = T

    def state(self, t):
        t = np.atleast_1d(t)
        return np.broadcast_to(self.T, t.shape + (4, 4)), np.zeros(t.shape + (6,)), np.zeros(t.shape + (6,))


def test_stationary_imu_measures_gravity_reaction():
    # at (a, 0, 0) with body axes aligned to ECEF, gravity is -9.80665 x, so f = +9.80665 x
    tr = _Stationary(lie.make_pose(np.eye(3), [geodesy.WGS84.a_m, 0.0, 0.0]))
    acc, gyro = synth_imu(tr, np.array([0.0, 0.005]), np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(acc, [[geodesy.GRAVITY_MAGNITUDE, 0, 0]] * 2, atol=1e-12)
    np.testing.assert_array_equal(gyro, 0.0)


@pytest.mark.parametrize("omega", [(0.0, 0.0, 0.0), (0.0, 0.0, 0.1), (0.01, 0.02, -0.15)])
def test_noise_free_preintegration_reproduces_truth(omega):
    tr = _straight(omega=omega, accel=(0.5, 0.1, 0.0))
    t = 3.0 + np.arange(20) * 0.005
    acc, gyr = synth_imu(tr, t, np.zeros(3), np.zeros(3))
    T, w, _ = tr.state([3.0, 3.1])
    pre = preintegrate((t, acc, gyr), gravity=geodesy.gravity_ecef(T[0, :3, 3]), t_end=3.1)
    Tj, nuj = imu.predict(T[0], w[0, :3], pre)
    assert np.max(np.abs(Tj[:3, 3] - T[1, :3, 3])) < 1e-4
    assert np.max(np.abs(nuj - w[1, :3])) < 1e-4
    assert np.max(np.abs(lie.so3_log(Tj[:3, :3].T @ T[1, :3, :3]))) < 1e-4


def test_bias_random_walk_variance_grows_linearly():
    finals = []
    for seed in range(100):
        st = synthesize(_scenario(seed=seed, gnss={"enabled": False}, pvt={"enabled": False},
                                  odometry={"enabled": False}, speed={"enabled": False}))
        finals.append(st.imu_bias_acc[[400, 1000, 2000], 0] - st.imu_bias_acc[0, 0])
    var = np.var(np.array(finals), axis=0)
    expected = 1e-4**2 * np.array([2.0, 5.0, 10.0])
    # chi-square with 99 dof: the sample variance lies within ~30% of the truth
    np.testing.assert_allclose(var / expected, 1.0, atol=0.35)
    assert var[0] < var[1] < var[2]


# ---------------------------------------------------------------------------
# GNSS


def _epoch_at(tr, t, clock=(0.0, 0.0), rng=None, **kw):
    cons = visible_constellation(ORIGIN, 8, np.random.default_rng(0))
    T, w, _ = tr.state(np.array([t]))
    args = dict(cn0_zenith=45.0, cn0_slope=0.15, cn0_noise=0.0, min_elevation_deg=15.0)
    args.update(kw)
    lever = np.array([0.5, 0.0, -1.5])
    ep, biased = synth_gnss_epoch(t, T[0], w[0], clock, cons, lever, cn0_lambda(1.0, 45.0), cn0_lambda(0.1, 45.0), rng=rng, **args)
    return ep, biased, T[0], w[0], lever


@pytest.mark.parametrize("clock", [(0.0, 0.0), (120.0, -0.7)])
def test_noise_free_pseudorange_doppler_zero_residual(clock):
    tr = _straight(omega=(0.0, 0.0, 0.1), accel=(0.3, 0.0, 0.0))
    ep, _, T, w, lever = _epoch_at(tr, 4.2, clock=clock)
    assert len(ep) == 8
    r, _ = prdo_residual(T, w[:3], np.array(clock), ep.sat_pos, ep.sat_vel, ep.pseudorange, ep.doppler_hz,
                         ep.wavelength, lever, w[3:])
    np.testing.assert_allclose(r, 0.0, atol=1e-6)


def test_elevation_mask_and_cn0_ordering():
    tr = _straight()
    ep, _, _, _, _ = _epoch_at(tr, 1.0, min_elevation_deg=40.0)
    assert np.all(np.rad2deg(ep.elevation) >= 40.0)
    order = np.argsort(ep.elevation)
    assert np.all(np.diff(ep.cn0_dbhz[order]) >= 0.0)


def test_outage_window_empties_epochs():
    s = _scenario(degradations=[{"kind": "outage", "t_start": 3.0, "t_end": 6.0}])
    st = synthesize(s)
    for ep in st.gnss:
        inside = 3.0 <= ep.t < 6.0
        assert (len(ep) == 0) == inside
    assert not any(3.0 <= p.t < 6.0 for p in st.pvt)


def test_multipath_fraction():
    s = _scenario(duration=9.95, degradations=[{"kind": "multipath", "t_start": 0.0, "t_end": 100.0, "bias_m": 50.0, "fraction": 0.25}])
    st = synthesize(s)
    flags = np.concatenate(st.gnss_biased)
    assert len(st.gnss) == 100
    assert abs(flags.mean() - 0.25) <= 0.05


def test_reduced_satellites_keeps_highest():
    s = _scenario(degradations=[{"kind": "reduced_sats", "t_start": 2.0, "t_end": 4.0, "n": 4}])
    st = synthesize(s, noise=False)
    full = [e for e in st.gnss if e.t < 2.0][0]
    red = [e for e in st.gnss if 2.0 <= e.t < 4.0][0]
    assert len(red) == 4 and len(full) == 8
    assert np.min(red.elevation) >= np.sort(full.elevation)[-4] - 1e-3


# ---------------------------------------------------------------------------
# other sensors


def test_noise_free_pvt_zero_residual():
    tr = _straight(omega=(0.0, 0.0, 0.2))
    T, w, _ = tr.state(np.array([2.5]))
    lever = np.array([0.5, 0.0, -1.5])
    sol = synth_pvt(2.5, T[0], w[0], lever, 1.0, 0.1)
    r, _ = pvt_residual(T[0], w[0, :3], sol.position, sol.velocity_ned, lever, w[0, 3:])
    np.testing.assert_allclose(r, 0.0, atol=1e-7)


def test_noise_free_odometry_zero_residual():
    tr = _straight(omega=(0.0, 0.01, 0.2), accel=(0.5, 0, 0))
    T, _, _ = tr.state(np.array([1.03, 1.13]))
    inc = synth_odometry(1.03, 1.13, T[0], T[1], 0.02, 0.002)
    r, _, _ = between_pose_residual(T[0], T[1], inc.delta)
    np.testing.assert_allclose(r, 0.0, atol=1e-10)


def test_speed_in_pure_yaw_with_rear_lever():
    w = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.5])
    lever = np.array([-1.0, 0.0, 0.0])
    sm = synth_speed(0.0, w, lever, 0.05)
    # omega x l = (0, 0, 0.5) x (-1, 0, 0) = (0, -0.5, 0)
    np.testing.assert_allclose(sm.v2d, [0.0, -0.5], atol=1e-15)
    r, _ = velocity2d_residual(w[:3], sm.v2d, lever, w[3:])
    np.testing.assert_allclose(r, 0.0, atol=1e-15)


def test_lying_pvt_reports_scaled_sigma():
    st = synthesize(_scenario(pvt={"lying_factor": 0.1, "sigma_pos": 2.0, "sigma_vel": 0.3}))
    np.testing.assert_allclose(st.pvt[0].std, [0.2] * 3 + [0.03] * 3)


# ---------------------------------------------------------------------------
# determinism, delays, schedules, configuration


def test_same_seed_gives_identical_streams():
    a = synthesize(_scenario())
    b = synthesize(_scenario())
    np.testing.assert_array_equal(a.imu_acc, b.imu_acc)
    assert all(np.array_equal(x.pseudorange, y.pseudorange) for x, y in zip(a.gnss, b.gnss))
    assert all(np.array_equal(x.delta, y.delta) for x, y in zip(a.odometry, b.odometry))
    c = synthesize(_scenario(seed=6))
    assert not np.array_equal(a.imu_acc, c.imu_acc)


def test_delays_shift_stamps():
    s = _scenario(gnss={"delay_s": 0.02}, speed={"delay_s": 0.007})
    st = synthesize(s, noise=False)
    np.testing.assert_allclose(st.gnss[0].t, 0.05 + 0.02)
    np.testing.assert_allclose(st.speed[0].t, 0.003 + 0.007)


def test_sensor_timestamps_are_unaligned():
    st = synthesize(_scenario(), noise=False)
    grid = np.arange(0, 10.01, 0.1)
    for times in ([e.t for e in st.gnss], [o.t_j for o in st.odometry]):
        dist = np.min(np.abs(np.subtract.outer(np.array(times), grid)), axis=1)
        assert np.all(dist > 0.01)


def test_unknown_key_names_field_path():
    with pytest.raises(ScenarioError, match=r"gnss\.sigma_rho"):
        scenario_from_dict({"gnss": {"sigma_rho": 1.0}})


@pytest.mark.parametrize(
    "data, path",
    [
        ({"duration": -1.0}, "duration"),
        ({"imu": {"rate_hz": 0.0}}, "imu.rate_hz"),
        ({"gnss": {"sigma_pr": "big"}}, "gnss.sigma_pr"),
        ({"degradations": [{"kind": "fog", "t_start": 0.0, "t_end": 1.0}]}, r"degradations\[0\]\.kind"),
        ({"trajectory": {"segments": [{"duration": 0.0}]}}, r"trajectory\.segments\[0\]\.duration"),
    ],
)
def test_invalid_values_name_field_path(data, path):
    with pytest.raises(ScenarioError, match=path):
        scenario_from_dict(data)


@pytest.mark.parametrize("name", ["open_sky", "tunnel", "multipath", "accelerating"])
def test_bundled_scenarios_load(name):
    s = load_scenario(bundled_scenario_path(name))
    assert s.name == name
    tr = s.build_trajectory()
    assert tr.duration >= s.duration - 1e-9


def test_overrides_round_trip():
    s = Scenario().with_overrides(**{"gnss.sigma_pr": 2.5, "seed": 9})
    assert s.gnss.sigma_pr == 2.5 and s.seed == 9
