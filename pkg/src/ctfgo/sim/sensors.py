"""Noise-corrupted asynchronous measurement streams generated from ground truth.

Every forward model here mirrors the estimator's residuals in
``ctfgo.factors`` so that noise-free measurements give zero residual at the
true states. Stamped times are ``true time + delay``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import geodesy, lie
from ..factors.types import L1_WAVELENGTH, GnssEpoch, OdometryIncrement, PvtSolution, SpeedSample
from .constellation import Constellation, make_constellation
from .scenario import Scenario

SENSORS = ("imu", "gnss", "pvt", "odometry", "speed")


def schedule(duration: float, rate_hz: float, offset_s: float = 0.0) -> np.ndarray:
    """Sample times ``offset + k / rate`` inside ``[0, duration]``."""
    n = int(np.floor((duration - offset_s) * rate_hz + 1e-9)) + 1
    return offset_s + np.arange(max(n, 0)) / rate_hz


@dataclass
class ClockTruth:
    t: np.ndarray
    bias: np.ndarray
    drift: np.ndarray

    def at(self, t) -> np.ndarray:
        """Bias and drift at ``t``; before the first sample the drift is extrapolated."""
        t = np.asarray(t, float)
        before = np.minimum(t - self.t[0], 0.0)
        bias = np.interp(t, self.t, self.bias) + before * self.drift[0]
        return np.stack([bias, np.interp(t, self.t, self.drift)], axis=-1)


def synth_clock(times: np.ndarray, bias0: float, drift0: float, q_bias: float, q_drift: float,
                rng: np.random.Generator) -> ClockTruth:
    """Receiver clock following the constant-drift random-walk model."""
    bias = np.empty(times.size)
    drift = np.empty(times.size)
    b, d = bias0, drift0
    prev = times[0] if times.size else 0.0
    for k, t in enumerate(times):
        dt = t - prev
        if dt > 0:
            b = b + d * dt + rng.normal(0.0, np.sqrt(q_bias * dt))
            d = d + rng.normal(0.0, np.sqrt(q_drift * dt))
        bias[k], drift[k] = b, d
        prev = t
    return ClockTruth(times, bias, drift)


def cn0_lambda(sigma: float, cn0_zenith: float) -> float:
    """Scale ``lambda`` so that ``lambda 10^(-C/N0 / 10) = sigma^2`` at the zenith C/N0."""
    return sigma * sigma * 10.0 ** (cn0_zenith / 10.0)


def synth_imu(truth, times: np.ndarray, acc_bias: np.ndarray, gyro_bias: np.ndarray, acc_noise: float = 0.0,
              gyro_noise: float = 0.0, rng: np.random.Generator | None = None):
    """Specific force and angular rate in the body frame.

    ``f = R^T (a - g(p)) + b_a + n_a`` with ``a = R (nu_dot + omega x nu)``;
    ``acc_bias``/``gyro_bias`` may be per-sample arrays. Noise values are
    continuous densities, converted with the sample interval.
    """
    T, w, wd = truth.state(times)
    R = T[:, :3, :3]
    nu, omega = w[:, :3], w[:, 3:]
    a_body = wd[:, :3] + np.cross(omega, nu)
    g_body = np.einsum("nji,nj->ni", R, geodesy.gravity_ecef(T[:, :3, 3]))
    acc = a_body - g_body + acc_bias
    gyro = omega + gyro_bias
    if rng is not None and times.size > 1:
        dt = float(np.median(np.diff(times)))
        acc = acc + rng.normal(0.0, acc_noise / np.sqrt(dt), acc.shape)
        gyro = gyro + rng.normal(0.0, gyro_noise / np.sqrt(dt), gyro.shape)
    return acc, gyro


def random_walk(times: np.ndarray, start, sigma: float, rng: np.random.Generator) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    dt = np.diff(times, prepend=times[0])
    steps = rng.normal(0.0, 1.0, (times.size, start.size)) * (sigma * np.sqrt(dt))[:, None]
    return start + np.cumsum(steps, axis=0)


def antenna_state(T, w, lever):
    R = T[..., :3, :3]
    p = T[..., :3, 3] + np.einsum("...ij,j->...i", R, lever)
    v = np.einsum("...ij,...j->...i", R, w[..., :3] + np.cross(w[..., 3:], lever))
    return p, v


def synth_gnss_epoch(t: float, T, w, clock, constellation: Constellation, lever, lam_pr: float, lam_do: float,
                     cn0_zenith: float, cn0_slope: float, cn0_noise: float, min_elevation_deg: float,
                     rng: np.random.Generator | None = None, multipath: tuple | None = None,
                     max_sats: int | None = None, outage: bool = False, wavelength: float = L1_WAVELENGTH):
    """One epoch of pseudorange and Doppler observations at true time ``t``.

    ``multipath = (bias_m, fraction)`` adds ``bias_m`` to each satellite's
    pseudorange independently with probability ``fraction``. Returns the
    epoch and a boolean mask of biased satellites.
    """
    p_ant, v_ant = antenna_state(T, w, np.asarray(lever, float))
    sat_pos = constellation.positions(t)
    sat_vel = constellation.velocities(t)
    el, _ = geodesy.elevation_azimuth(p_ant, sat_pos)
    keep = el >= np.deg2rad(min_elevation_deg)
    if outage:
        keep[:] = False
    idx = np.flatnonzero(keep)
    if max_sats is not None and idx.size > max_sats:
        idx = idx[np.argsort(-el[idx], kind="stable")[:max_sats]]
        idx.sort()
    el = el[idx]
    sp, sv = sat_pos[idx], sat_vel[idx]
    d = sp - p_ant
    rng_true = np.linalg.norm(d, axis=-1)
    u = d / rng_true[:, None]
    rate = np.sum(u * (v_ant - sv), axis=-1)
    cn0 = cn0_zenith - cn0_slope * (90.0 - np.rad2deg(el))
    if rng is not None and cn0_noise > 0:
        cn0 = cn0 + rng.normal(0.0, cn0_noise, cn0.shape)
    var_pr = lam_pr * 10.0 ** (-cn0 / 10.0)
    var_do = lam_do * 10.0 ** (-cn0 / 10.0)
    pr = rng_true + clock[0]
    lam_dop = -rate - clock[1]
    biased = np.zeros(idx.size, dtype=bool)
    if rng is not None:
        pr = pr + rng.normal(0.0, 1.0, idx.size) * np.sqrt(var_pr)
        lam_dop = lam_dop + rng.normal(0.0, 1.0, idx.size) * np.sqrt(var_do)
        if multipath is not None:
            biased = rng.uniform(size=idx.size) < multipath[1]
            pr = pr + biased * multipath[0]
    epoch = GnssEpoch(t, constellation.sat_ids[idx].copy(), sp, sv, pr, lam_dop / wavelength, cn0, el, wavelength)
    return epoch, biased


def synth_pvt(t: float, T, w, lever, sigma_pos: float, sigma_vel: float, lying_factor: float = 1.0,
              rng: np.random.Generator | None = None, bias=None) -> PvtSolution:
    """Receiver fix of antenna position (ECEF) and velocity (NED at the reported position)."""
    p_ant, v_ant = antenna_state(T, w, np.asarray(lever, float))
    if rng is not None:
        p_ant = p_ant + rng.normal(0.0, sigma_pos, 3)
    if bias is not None:
        p_ant = p_ant + bias
    v_ned = geodesy.dcm_ecef_to_ned(geodesy.ecef_to_llh(p_ant)) @ v_ant
    if rng is not None:
        v_ned = v_ned + rng.normal(0.0, sigma_vel, 3)
    std = lying_factor * np.array([sigma_pos] * 3 + [sigma_vel] * 3)
    return PvtSolution(t, p_ant, v_ned, std)


def synth_odometry(t_i: float, t_j: float, T_i, T_j, sigma_pos: float, sigma_rot: float,
                   rng: np.random.Generator | None = None) -> OdometryIncrement:
    """Measured ``(T_i^-1 T_j)^-1`` perturbed on the right by ``exp(n)``."""
    delta = lie.pose_inverse(lie.pose_inverse(T_i) @ T_j)
    cov = np.diag([sigma_pos**2] * 3 + [sigma_rot**2] * 3)
    if rng is not None:
        n = rng.normal(0.0, 1.0, 6) * np.sqrt(np.diag(cov))
        delta = delta @ lie.exp_se3(n)
    return OdometryIncrement(t_i, t_j, delta, cov)


def synth_speed(t: float, w, lever, sigma: float, rng: np.random.Generator | None = None) -> SpeedSample:
    v = w[:3] + np.cross(w[3:], np.asarray(lever, float))
    v2d = v[:2].copy()
    if rng is not None:
        v2d = v2d + rng.normal(0.0, sigma, 2)
    return SpeedSample(t, v2d, np.full(2, max(sigma, 1e-6)))


@dataclass
class Streams:
    """All synthesized measurements with stamped times, plus the truth used to make them."""

    scenario: Scenario
    truth: object
    constellation: Constellation
    imu_t: np.ndarray
    imu_acc: np.ndarray
    imu_gyro: np.ndarray
    imu_bias_acc: np.ndarray
    imu_bias_gyro: np.ndarray
    clock: ClockTruth
    gnss: list = field(default_factory=list)
    gnss_biased: list = field(default_factory=list)
    pvt: list = field(default_factory=list)
    odometry: list = field(default_factory=list)
    speed: list = field(default_factory=list)

    @property
    def delays(self) -> dict:
        s = self.scenario
        return {name: getattr(s, name).delay_s for name in SENSORS}


def _active(degradations, kind: str, t: float):
    for d in degradations:
        if d.kind == kind and d.t_start <= t < d.t_end:
            return d
    return None


def synthesize(scenario: Scenario, noise: bool | None = None) -> Streams:
    """Generate every enabled stream of a scenario; identical seeds give identical streams.

    With ``noise=False`` (default: the scenario's ``noise`` flag) all random
    perturbations (sensor noise, bias walks, clock random walk, multipath) are
    disabled.
    """
    s = scenario
    noise = s.noise if noise is None else noise
    truth = s.build_trajectory()
    constellation = make_constellation(s.constellation.mode, s.origin_llh, s.constellation.n_sats, s.constellation_seed)
    root = np.random.SeedSequence(s.seed)
    rngs = {name: np.random.default_rng(child) for name, child in zip(SENSORS + ("clock",), root.spawn(len(SENSORS) + 1))}
    noisy = (lambda name: rngs[name]) if noise else (lambda name: None)

    imu_t = schedule(s.duration, s.imu.rate_hz)
    if noise:
        ba = random_walk(imu_t, s.imu.acc_bias, s.imu.acc_bias_walk, rngs["imu"])
        bg = random_walk(imu_t, s.imu.gyro_bias, s.imu.gyro_bias_walk, rngs["imu"])
    else:
        ba = np.broadcast_to(np.asarray(s.imu.acc_bias, float), (imu_t.size, 3)).copy()
        bg = np.broadcast_to(np.asarray(s.imu.gyro_bias, float), (imu_t.size, 3)).copy()
    acc, gyro = synth_imu(truth, imu_t, ba, bg, s.imu.acc_noise, s.imu.gyro_noise, noisy("imu"))

    g = s.gnss
    gnss_t = schedule(s.duration, g.rate_hz, g.offset_s)
    if noise:
        clock = synth_clock(gnss_t, g.clock_bias, g.clock_drift, g.clock_q_bias, g.clock_q_drift, rngs["clock"])
    else:
        clock = synth_clock(gnss_t, g.clock_bias, g.clock_drift, 0.0, 0.0, rngs["clock"])
    out = Streams(s, truth, constellation, imu_t + s.imu.delay_s, acc, gyro, ba, bg, clock)

    if g.enabled and gnss_t.size:
        T, w, _ = truth.state(gnss_t)
        lam_pr = cn0_lambda(g.sigma_pr, g.cn0_zenith)
        lam_do = cn0_lambda(g.sigma_doppler, g.cn0_zenith)
        for k, t in enumerate(gnss_t):
            mp = _active(s.degradations, "multipath", t)
            red = _active(s.degradations, "reduced_sats", t)
            epoch, biased = synth_gnss_epoch(
                t, T[k], w[k], (clock.bias[k], clock.drift[k]), constellation, g.lever_arm, lam_pr, lam_do,
                g.cn0_zenith, g.cn0_slope, g.cn0_noise if noise else 0.0, s.constellation.min_elevation_deg,
                rng=noisy("gnss"), multipath=(mp.bias_m, mp.fraction) if mp and noise else None,
                max_sats=red.n if red else None, outage=_active(s.degradations, "outage", t) is not None,
            )
            out.gnss.append(_restamp(epoch, t + g.delay_s))
            out.gnss_biased.append(biased)

    p = s.pvt
    if p.enabled:
        pvt_t = schedule(s.duration, p.rate_hz, p.offset_s)
        T, w, _ = truth.state(pvt_t) if pvt_t.size else (None, None, None)
        rng = noisy("pvt")
        for k, t in enumerate(pvt_t):
            if _active(s.degradations, "outage", t):
                continue
            bias = None
            mp = _active(s.degradations, "multipath", t)
            if mp and rng is not None and rng.uniform() < mp.fraction:
                az = rng.uniform(0, 2 * np.pi)
                bias = mp.bias_m * (geodesy.dcm_ecef_to_enu(s.origin_llh).T @ np.array([np.sin(az), np.cos(az), 0.0]))
            sol = synth_pvt(t, T[k], w[k], g.lever_arm, p.sigma_pos, p.sigma_vel, p.lying_factor, rng, bias)
            out.pvt.append(PvtSolution(t + p.delay_s, sol.position, sol.velocity_ned, sol.std))

    o = s.odometry
    if o.enabled:
        odo_t = schedule(s.duration, o.rate_hz, o.offset_s)
        if odo_t.size > 1:
            T, _, _ = truth.state(odo_t)
            rng = noisy("odometry")
            for k in range(1, odo_t.size):
                inc = synth_odometry(odo_t[k - 1], odo_t[k], T[k - 1], T[k], o.sigma_pos, np.deg2rad(o.sigma_rot_deg), rng)
                out.odometry.append(OdometryIncrement(inc.t_i + o.delay_s, inc.t_j + o.delay_s, inc.delta, inc.covariance))

    v = s.speed
    if v.enabled:
        spd_t = schedule(s.duration, v.rate_hz, v.offset_s)
        if spd_t.size:
            _, w, _ = truth.state(spd_t)
            rng = noisy("speed")
            for k, t in enumerate(spd_t):
                sm = synth_speed(t, w[k], v.lever_arm, v.sigma, rng)
                out.speed.append(SpeedSample(t + v.delay_s, sm.v2d, sm.std))
    return out


def _restamp(epoch: GnssEpoch, t: float) -> GnssEpoch:
    return GnssEpoch(t, epoch.sat_ids, epoch.sat_pos, epoch.sat_vel, epoch.pseudorange, epoch.doppler_hz,
                     epoch.cn0_dbhz, epoch.elevation, epoch.wavelength)
