"""Online replay of synthesized streams through the fixed-lag smoother."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import geodesy, lie
from .factors.robust import RobustLoss
from .factors.types import NavState
from .graph.config import ConfigError, EstimatorConfig, PriorSigmas, SolverConfig
from .graph.gate import ZeroVelocityGate
from .graph.publisher import Publisher
from .graph.smoother import SENSOR_ORDER, Smoother
from .gp import GpModel
from .sim.scenario import Scenario
from .sim.sensors import Streams, cn0_lambda, synthesize

EVENT_ORDER = {"imu": 0, **{k: v + 1 for k, v in SENSOR_ORDER.items()}}


@dataclass
class RunConfig:
    fusion: str = "tight"
    gp_model: str = "wnoj"
    loss: str = "cauchy"
    loss_scale: float = 2.0
    lag_seconds: float = 3.0
    use_odometry: bool = True
    use_speed: bool = True
    t_sync: float = 0.01
    max_iterations: int = 10
    qc: tuple = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1)
    record_covariance: bool = False
    publish: bool = True
    shuffle_seed: int | None = None
    # offsets (s) after each state at which the GP is queried from the window just before marginalization
    query_offsets: tuple = ()

    def __post_init__(self):
        if self.fusion not in ("loose", "tight"):
            raise ConfigError(f"fusion: must be 'loose' or 'tight', got {self.fusion!r}")
        if self.gp_model not in ("wnoa", "wnoj"):
            raise ConfigError(f"gp: must be 'wnoa' or 'wnoj', got {self.gp_model!r}")
        if self.loss not in ("none", "cauchy", "huber"):
            raise ConfigError(f"loss: must be 'none', 'cauchy' or 'huber', got {self.loss!r}")
        if not self.lag_seconds > 0.0:
            raise ConfigError("lag: must be positive")


@dataclass
class RunResult:
    scenario: Scenario
    config: RunConfig
    smoothed: list
    published_t: np.ndarray
    published_pose: np.ndarray
    published_velocity: np.ndarray
    routing: dict
    reports: list
    covariance: list = field(default_factory=list)
    final_cost: float = 0.0
    wall_seconds: float = 0.0
    evicted: int = 0
    queried: list = field(default_factory=list)

    @property
    def smoothed_t(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.smoothed])

    @property
    def smoothed_pose(self) -> np.ndarray:
        return np.array([s.pose for s in self.smoothed])

    @property
    def max_iterations(self) -> int:
        return max((r.iterations for r in self.reports), default=0)


def estimator_config(scenario: Scenario, run: RunConfig) -> EstimatorConfig:
    s = scenario
    ini = s.init
    prior = PriorSigmas(
        position=max(ini.sigma_pos, 1e-3), rotation=max(ini.sigma_rot, 1e-5), velocity=max(ini.sigma_vel, 1e-3),
        angular_rate=0.01, bias_acc=max(ini.sigma_bias_acc, 1e-5), bias_gyro=max(ini.sigma_bias_gyro, 1e-6),
        clock_bias=max(ini.sigma_clock_bias, 1e-2), clock_drift=max(ini.sigma_clock_drift, 1e-3),
    )
    from .factors.imu import ImuNoise

    return EstimatorConfig(
        fusion=run.fusion,
        gp_model=GpModel(run.gp_model),
        qc=tuple(run.qc),
        loss=RobustLoss(run.loss, run.loss_scale),
        imu_noise=ImuNoise(max(s.imu.acc_noise, 1e-5), max(s.imu.gyro_noise, 1e-6),
                           max(s.imu.acc_bias_walk, 1e-6), max(s.imu.gyro_bias_walk, 1e-7)),
        use_gnss=s.gnss.enabled,
        use_pvt=s.pvt.enabled,
        use_odometry=run.use_odometry and s.odometry.enabled,
        use_speed=run.use_speed and s.speed.enabled,
        lever_gnss=tuple(s.gnss.lever_arm),
        lever_speed=tuple(s.speed.lever_arm),
        lambda_pr=cn0_lambda(s.gnss.sigma_pr, s.gnss.cn0_zenith),
        lambda_doppler=cn0_lambda(s.gnss.sigma_doppler, s.gnss.cn0_zenith),
        clock_q_bias=max(s.gnss.clock_q_bias, 1e-8),
        clock_q_drift=max(s.gnss.clock_q_drift, 1e-10),
        prior=prior,
        solver=SolverConfig(
            max_iterations=run.max_iterations,
            lag_seconds=run.lag_seconds,
            t_sync=run.t_sync,
            delays={name: getattr(s, name).delay_s for name in ("imu", "gnss", "pvt", "odometry", "speed")},
        ),
    )


def truth_state(streams: Streams, t: float) -> NavState:
    T, w, wd = streams.truth.state(t)
    k = int(np.clip(np.searchsorted(streams.imu_t - streams.scenario.imu.delay_s, t), 0, streams.imu_t.size - 1))
    return NavState(t, T[0], w[0], wd[0], streams.imu_bias_acc[k].copy(), streams.imu_bias_gyro[k].copy(),
                    np.asarray(streams.clock.at(t), float))


def initial_state(streams: Streams, noise: bool | None = None) -> NavState:
    """True state at t=0 perturbed by the scenario's initialization sigmas."""
    s = streams.scenario
    x = truth_state(streams, 0.0)
    if not (s.noise if noise is None else noise):
        return x
    rng = np.random.default_rng(np.random.SeedSequence([s.seed, 7919]))
    i = s.init
    d = np.concatenate([rng.normal(0, i.sigma_pos, 3), rng.normal(0, i.sigma_rot, 3), rng.normal(0, i.sigma_vel, 3),
                        np.zeros(3), rng.normal(0, i.sigma_bias_acc, 3), rng.normal(0, i.sigma_bias_gyro, 3),
                        [rng.normal(0, i.sigma_clock_bias), rng.normal(0, i.sigma_clock_drift)]])
    return x.retract(d)


def _events(streams: Streams) -> list:
    ev = []
    for k in range(streams.imu_t.size):
        ev.append((float(streams.imu_t[k]), 0, k, "imu", (streams.imu_t[k], streams.imu_acc[k], streams.imu_gyro[k])))
    for name in ("gnss", "pvt", "odometry", "speed"):
        for k, m in enumerate(getattr(streams, name)):
            stamp = m.t_j if name == "odometry" else m.t
            ev.append((float(stamp), EVENT_ORDER[name], k, name, m))
    ev.sort(key=lambda e: e[:3])
    return ev


def _gate_speed(name: str, m) -> float | None:
    if name == "speed":
        return float(np.linalg.norm(m.v2d))
    if name == "odometry":
        return float(np.linalg.norm(m.delta[:3, 3]) / max(m.t_j - m.t_i, 1e-9))
    if name == "pvt":
        return float(np.linalg.norm(m.velocity_ned))
    return None


def run(scenario: Scenario, config: RunConfig | None = None, streams: Streams | None = None,
        init: NavState | None = None) -> RunResult:
    """Replay a scenario at the optimization rate and collect smoothed and published trajectories."""
    config = config or RunConfig()
    streams = streams or synthesize(scenario)
    est = estimator_config(scenario, config)
    sm = Smoother(est)
    t_wall = time.perf_counter()
    x0 = init or initial_state(streams)
    sm.initialize(x0)
    gate = ZeroVelocityGate()
    pub = Publisher()
    events = _events(streams)
    rng = None if config.shuffle_seed is None else np.random.default_rng(config.shuffle_seed)

    imu_t = streams.imu_t - scenario.imu.delay_s
    period = 1.0 / est.solver.opt_frequency_hz
    n_ticks = int(np.floor(scenario.duration / period + 1e-9))
    pub_t, pub_T, pub_v, cov, queried = [], [], [], [], []

    def query(ids):
        for sid in ids:
            for off in config.query_offsets:
                tq = sm.timeline.time_of(sid) + off
                if tq <= sm.timeline.newest_time + 1e-9:
                    queried.append((tq, *sm.interpolate(tq)))

    e = 0
    for tick in range(1, n_ticks + 1):
        t_now = tick * period
        batch = []
        while e < len(events) and events[e][0] <= t_now + 1e-9:
            batch.append(events[e])
            e += 1
        if rng is not None:
            batch = [batch[i] for i in rng.permutation(len(batch))]
        for _, _, _, name, m in batch:
            if name == "imu":
                sm.add_imu(*m)
                continue
            sm.add_measurement(name, m)
            v = _gate_speed(name, m)
            if v is not None:
                gate.add(name, m.t_j if name == "odometry" else m.t, v)
        if not gate.stationary(t_now):
            sm.advance(t_now)
        sm.optimize()
        if config.record_covariance:
            nid = sm.timeline.newest_id
            cov.append((sm.timeline.newest_time, np.diag(sm.marginal_covariance(nid))))
        newest = sm.newest_state()
        if config.publish:
            k0 = int(np.searchsorted(imu_t, newest.timestamp + 1e-9, side="right")) - 1
            if k0 >= 0:
                pub.reset(newest, streams.imu_acc[k0], streams.imu_gyro[k0])
                k1 = int(np.searchsorted(imu_t, t_now + period + 1e-9, side="right"))
                for k in range(k0 + 1, k1):
                    s = pub.step(imu_t[k], streams.imu_acc[k], streams.imu_gyro[k])
                    if imu_t[k] > t_now + 1e-9:
                        pub_t.append(s.timestamp)
                        pub_T.append(s.pose)
                        pub_v.append(s.world_velocity)
        query(sm.pending_removal())
        sm.marginalize()
    query(sm.timeline.ids[:-1])
    final_cost = sm.cost()
    wall = time.perf_counter() - t_wall
    return RunResult(
        scenario=scenario, config=config, smoothed=sm.finalize(),
        published_t=np.array(pub_t), published_pose=np.array(pub_T).reshape(-1, 4, 4),
        published_velocity=np.array(pub_v).reshape(-1, 3), routing=sm.routing_counts(),
        reports=list(sm.reports), covariance=cov, final_cost=final_cost, wall_seconds=wall, evicted=sm.evicted,
        queried=queried,
    )


# ---------------------------------------------------------------------------
# evaluation


def horizontal_errors(scenario: Scenario, streams_truth, t: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """2-D (east, north) position errors of body poses against truth at times ``t``."""
    if len(t) == 0:
        return np.zeros((0, 2))
    T_true, _, _ = streams_truth.state(np.asarray(t))
    enu_est = geodesy.ecef_to_enu(poses[:, :3, 3], scenario.origin_llh)
    enu_true = geodesy.ecef_to_enu(T_true[:, :3, 3], scenario.origin_llh)
    return (enu_est - enu_true)[:, :2]


def trajectory_errors(result: RunResult, truth) -> dict:
    """Position and rotation errors of the smoothed trajectory."""
    t = result.smoothed_t
    T_est = result.smoothed_pose
    T_true, w_true, _ = truth.state(t)
    dp = np.linalg.norm(T_est[:, :3, 3] - T_true[:, :3, 3], axis=-1)
    dR = np.linalg.norm(lie.so3_log(np.swapaxes(T_true[:, :3, :3], -1, -2) @ T_est[:, :3, :3]), axis=-1)
    return {"position": dp, "rotation": dR}
