from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctfgo import geodesy
from ctfgo.factors.types import GnssEpoch
from ctfgo.metrics import TooFewPoints, ned_euler, rmse, smoothness, wrap_angle
from ctfgo.sim import Scenario, antenna_state, cn0_lambda, synthesize
from ctfgo.sim.trajectory import level_attitude
from ctfgo.snapshot import TooFewSatellites, wls_fix, wls_track


def test_smoothness_right_angle():
    assert abs(smoothness([[0, 0], [1, 0], [1, 1]]) - (math.pi / 2) ** 2) < 1e-12


def test_smoothness_collinear_zero():
    pts = np.outer(np.linspace(0, 5, 11), [1.0, 2.0, -0.5])
    assert abs(smoothness(pts)) < 1e-12


def test_smoothness_removes_consecutive_duplicates():
    assert smoothness([[0, 0], [1, 0], [1, 0], [1, 1]]) == smoothness([[0, 0], [1, 0], [1, 1]])


@pytest.mark.parametrize("pts", [[], [[0, 0]], [[0, 0], [1, 1]], [[0, 0], [0, 0], [1, 1]]])
def test_smoothness_too_few_points(pts):
    with pytest.raises(TooFewPoints):
        smoothness(np.array(pts, float).reshape(-1, 2))


def test_smoothness_decreases_toward_chord():
    # shallow zig-zag (amplitude below the point spacing) flattened in 5 steps
    x = np.linspace(0, 10, 6)
    zig = np.where(np.arange(6) % 2, 1.0, -1.0)
    s = [smoothness(np.column_stack([x, a * zig])) for a in (1.0, 0.8, 0.6, 0.4, 0.2, 0.0)]
    assert all(a > b for a, b in zip(s, s[1:]))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-np.pi, np.pi))
def test_smoothness_invariant_to_rigid_motion(scale, yaw):
    pts = np.array([[0, 0], [1, 0.2], [2.5, 0.1], [3, 1.0]])
    c, s = np.cos(yaw), np.sin(yaw)
    moved = pts @ np.array([[c, -s], [s, c]]).T + [3.0, -7.0]
    assert smoothness(moved) == pytest.approx(smoothness(pts), rel=1e-9)
    # scaling the path divides every turn term by the scale
    assert smoothness(scale * pts) == pytest.approx(smoothness(pts) / scale**2, rel=1e-9)


def test_rmse():
    assert rmse([3.0, -4.0]) == pytest.approx(math.sqrt(12.5))
    assert rmse([[3.0, 4.0], [0.0, 0.0]]) == pytest.approx(math.sqrt(12.5))
    assert math.isnan(rmse([]))


def test_wrap_angle():
    assert np.allclose(wrap_angle([3 * np.pi / 2, -3 * np.pi / 2, 0.1]), [-np.pi / 2, np.pi / 2, 0.1])


@pytest.mark.parametrize("heading", [0.0, 0.3, -2.0, 3.0])
def test_ned_euler_of_level_pose(heading):
    llh = np.array([0.8, 0.1, 100.0])
    T = np.eye(4)
    T[:3, :3] = level_attitude(llh, heading)
    T[:3, 3] = geodesy.llh_to_ecef(llh)
    roll, pitch, yaw = ned_euler(T)[0]
    assert abs(roll) < 1e-9 and abs(pitch) < 1e-9
    assert abs(wrap_angle(yaw - heading)) < 1e-9


# ---------------------------------------------------------------------------
# snapshot oracle


def test_wls_exact_on_noise_free_epoch():
    sc = Scenario(duration=1.0, noise=False)
    streams = synthesize(sc)
    lam = cn0_lambda(sc.gnss.sigma_pr, sc.gnss.cn0_zenith)
    for ep in streams.gnss[:3]:
        fix = wls_fix(ep, lam)
        T, w, _ = streams.truth.state(ep.t)
        p, _ = antenna_state(T[0], w[0], np.array(sc.gnss.lever_arm))
        assert np.linalg.norm(fix.position - p) < 1e-5
        assert fix.clock_bias == pytest.approx(streams.clock.at(ep.t)[0], abs=1e-5)


def test_wls_error_matches_covariance():
    sc = Scenario(duration=20.0, seed=3)
    streams = synthesize(sc)
    lam = cn0_lambda(sc.gnss.sigma_pr, sc.gnss.cn0_zenith)
    fixes = wls_track(streams.gnss, lam)
    T, w, _ = streams.truth.state(np.array([f.t for f in fixes]))
    p, _ = antenna_state(T, w, np.array(sc.gnss.lever_arm))
    err = np.array([f.position for f in fixes]) - p
    # normalized squared errors average to the 3 position dimensions
    nees = np.mean([e @ np.linalg.solve(f.covariance[:3, :3], e) for e, f in zip(err, fixes)])
    assert 2.0 < nees < 4.0


def test_wls_too_few_satellites():
    sc = Scenario(duration=0.2, noise=False)
    ep = synthesize(sc).gnss[0]
    cut = GnssEpoch(ep.t, ep.sat_ids[:3], ep.sat_pos[:3], ep.sat_vel[:3], ep.pseudorange[:3], ep.doppler_hz[:3],
                    ep.cn0_dbhz[:3], ep.elevation[:3])
    with pytest.raises(TooFewSatellites):
        wls_fix(cut, 1.0)
    assert wls_track([cut], 1.0) == []
