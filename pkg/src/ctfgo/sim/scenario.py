"""Scenario description: trajectory, constellation, sensor schedules and degradations.

Scenarios are plain dataclasses that can be built from nested dicts (for
example parsed TOML). Unknown keys and invalid values raise
:class:`ScenarioError` naming the offending field path.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .trajectory import SegmentTrajectory, SplineTrajectory, TwistSegment

DEGRADATION_KINDS = ("outage", "multipath", "reduced_sats")


class ScenarioError(ValueError):
    pass


@dataclass
class TrajectoryConfig:
    kind: str = "segments"
    heading_deg: float = 30.0
    initial_velocity: tuple = (10.0, 0.0, 0.0)
    segments: list = field(default_factory=lambda: [TwistSegment(60.0)])
    times: list = field(default_factory=list)
    waypoints_enu: list = field(default_factory=list)


@dataclass
class ConstellationConfig:
    mode: str = "visible"
    n_sats: int = 8
    seed: int = -1
    min_elevation_deg: float = 15.0


@dataclass
class ImuConfig:
    rate_hz: float = 200.0
    delay_s: float = 0.0
    acc_noise: float = 2e-3
    gyro_noise: float = 2e-4
    acc_bias_walk: float = 1e-4
    gyro_bias_walk: float = 1e-5
    acc_bias: tuple = (0.05, -0.03, 0.02)
    gyro_bias: tuple = (1e-3, -5e-4, 2e-4)


@dataclass
class GnssConfig:
    enabled: bool = True
    rate_hz: float = 10.0
    offset_s: float = 0.05
    delay_s: float = 0.0
    sigma_pr: float = 1.0
    sigma_doppler: float = 0.1
    cn0_zenith: float = 45.0
    cn0_slope: float = 0.15
    cn0_noise: float = 0.0
    lever_arm: tuple = (0.5, 0.0, -1.5)
    clock_bias: float = 100.0
    clock_drift: float = 0.5
    clock_q_bias: float = 0.01
    clock_q_drift: float = 1e-4


@dataclass
class PvtConfig:
    enabled: bool = True
    rate_hz: float = 10.0
    offset_s: float = 0.05
    delay_s: float = 0.0
    sigma_pos: float = 1.0
    sigma_vel: float = 0.1
    lying_factor: float = 1.0


@dataclass
class OdometryConfig:
    enabled: bool = True
    rate_hz: float = 10.0
    offset_s: float = 0.03
    delay_s: float = 0.0
    sigma_pos: float = 0.02
    sigma_rot_deg: float = 0.1


@dataclass
class SpeedConfig:
    enabled: bool = True
    rate_hz: float = 100.0
    offset_s: float = 0.003
    delay_s: float = 0.0
    sigma: float = 0.05
    lever_arm: tuple = (-1.0, 0.0, 0.0)


@dataclass
class InitConfig:
    """Perturbation of the initial guess handed to the estimator."""

    sigma_pos: float = 0.5
    sigma_rot: float = 0.005
    sigma_vel: float = 0.1
    sigma_clock_bias: float = 5.0
    sigma_clock_drift: float = 0.1
    sigma_bias_acc: float = 0.02
    sigma_bias_gyro: float = 2e-4


@dataclass
class Degradation:
    t_start: float
    t_end: float
    kind: str
    bias_m: float = 0.0
    fraction: float = 0.0
    n: int = 0


@dataclass
class Scenario:
    name: str = "default"
    duration: float = 60.0
    seed: int = 0
    noise: bool = True
    origin_llh_deg: tuple = (50.78, 6.06, 200.0)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    gnss: GnssConfig = field(default_factory=GnssConfig)
    pvt: PvtConfig = field(default_factory=PvtConfig)
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    speed: SpeedConfig = field(default_factory=SpeedConfig)
    init: InitConfig = field(default_factory=InitConfig)
    degradations: list = field(default_factory=list)

    def __post_init__(self):
        validate(self)

    @property
    def origin_llh(self) -> np.ndarray:
        lat, lon, h = self.origin_llh_deg
        return np.array([np.deg2rad(lat), np.deg2rad(lon), float(h)])

    @property
    def constellation_seed(self) -> int:
        return self.seed if self.constellation.seed < 0 else self.constellation.seed

    def build_trajectory(self):
        tr = self.trajectory
        if tr.kind == "segments":
            return SegmentTrajectory(self.origin_llh, np.deg2rad(tr.heading_deg), tr.initial_velocity, tr.segments)
        return SplineTrajectory(self.origin_llh, tr.times, tr.waypoints_enu)

    def with_overrides(self, **changes) -> "Scenario":
        """Copy with dotted-path overrides, e.g. ``{"gnss.sigma_pr": 2.0}``."""
        data = to_dict(self)
        for key, value in changes.items():
            node = data
            *head, last = key.split(".")
            for part in head:
                node = node[part]
            node[last] = value
        return scenario_from_dict(data)


_NESTED = {
    "trajectory": TrajectoryConfig,
    "constellation": ConstellationConfig,
    "imu": ImuConfig,
    "gnss": GnssConfig,
    "pvt": PvtConfig,
    "odometry": OdometryConfig,
    "speed": SpeedConfig,
    "init": InitConfig,
}


def _coerce(value, hint: str, path: str):
    try:
        if hint == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if hint == "int":
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if hint == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if hint == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if hint == "tuple":
            return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: expected {hint}, got {value!r}") from None
    return value


def _build(cls, data, path: str):
    if dataclasses.is_dataclass(data):
        return data
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected a table, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ScenarioError(f"{path}.{unknown[0]}: unknown key" if path else f"{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        hint = hints[key]
        if key in _NESTED and cls is Scenario:
            kwargs[key] = _build(_NESTED[key], value, sub)
        elif cls is TrajectoryConfig and key == "segments":
            kwargs[key] = [_build(TwistSegment, s, f"{sub}[{i}]") for i, s in enumerate(value)]
        elif cls is Scenario and key == "degradations":
            kwargs[key] = [_build(Degradation, d, f"{sub}[{i}]") for i, d in enumerate(value)]
        else:
            name = hint if isinstance(hint, str) else getattr(hint, "__name__", str(hint))
            kwargs[key] = _coerce(value, name, sub)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ScenarioError(f"{path or 'scenario'}: {exc}") from None


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ScenarioError(f"{path}: {message}")


def validate(s: Scenario) -> None:
    _check(s.duration > 0.0, "duration", "must be positive")
    _check(len(s.origin_llh_deg) == 3, "origin_llh_deg", "needs latitude, longitude, height")
    _check(abs(s.origin_llh_deg[0]) <= 90.0, "origin_llh_deg", "latitude outside [-90, 90]")
    tr = s.trajectory
    _check(tr.kind in ("segments", "spline"), "trajectory.kind", "must be 'segments' or 'spline'")
    if tr.kind == "segments":
        _check(len(tr.segments) > 0, "trajectory.segments", "at least one segment required")
        for i, seg in enumerate(tr.segments):
            _check(seg.duration > 0.0, f"trajectory.segments[{i}].duration", "must be positive")
    else:
        _check(len(tr.times) >= 6 and len(tr.times) == len(tr.waypoints_enu), "trajectory.times",
               "spline needs >= 6 waypoints with matching times")
    _check(s.constellation.mode in ("visible", "walker", "fixed"), "constellation.mode", "unknown mode")
    _check(s.constellation.n_sats >= 1, "constellation.n_sats", "must be >= 1")
    for name in ("imu", "gnss", "pvt", "odometry", "speed"):
        cfg = getattr(s, name)
        _check(cfg.rate_hz > 0.0, f"{name}.rate_hz", "must be positive")
        _check(cfg.delay_s >= 0.0, f"{name}.delay_s", "must be non-negative")
        if hasattr(cfg, "offset_s"):
            _check(0.0 <= cfg.offset_s < 1.0 / cfg.rate_hz, f"{name}.offset_s", "must lie within one sample period")
    for name, value in (("gnss.sigma_pr", s.gnss.sigma_pr), ("gnss.sigma_doppler", s.gnss.sigma_doppler),
                        ("pvt.sigma_pos", s.pvt.sigma_pos), ("pvt.sigma_vel", s.pvt.sigma_vel),
                        ("odometry.sigma_pos", s.odometry.sigma_pos), ("odometry.sigma_rot_deg", s.odometry.sigma_rot_deg),
                        ("speed.sigma", s.speed.sigma), ("pvt.lying_factor", s.pvt.lying_factor)):
        _check(value >= 0.0, name, "must be non-negative")
    for i, d in enumerate(s.degradations):
        p = f"degradations[{i}]"
        _check(d.kind in DEGRADATION_KINDS, f"{p}.kind", f"must be one of {DEGRADATION_KINDS}")
        _check(d.t_end > d.t_start, f"{p}.t_end", "must exceed t_start")
        _check(0.0 <= d.fraction <= 1.0, f"{p}.fraction", "must lie in [0, 1]")
        if d.kind == "reduced_sats":
            _check(d.n >= 0, f"{p}.n", "must be non-negative")


def scenario_from_dict(data: dict) -> Scenario:
    return _build(Scenario, data, "")


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: invalid TOML ({exc})") from None
    return scenario_from_dict(data)


def bundled_scenario_path(name: str) -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios" / f"{name}.toml"
