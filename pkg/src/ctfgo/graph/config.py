"""Estimator and solver configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..factors.imu import ImuNoise
from ..factors.robust import RobustLoss
from ..gp import JACOBIAN_MODES, GpModel
from .timeline import DEFAULT_SPACING, DEFAULT_T_SYNC

FUSION_MODES = ("loose", "tight")
SENSOR_NAMES = ("imu", "gnss", "pvt", "odometry", "speed")


class ConfigError(ValueError):
    """Invalid run or estimator configuration; the message names the field."""


@dataclass
class SolverConfig:
    max_iterations: int = 10
    convergence_tol: float = 1e-4
    absolute_tol: float = 1e-3
    step_tol: float = 1e-10
    damping_init: float = 1e-12
    max_damping_retries: int = 8
    lag_seconds: float = 3.0
    opt_frequency_hz: float = 10.0
    spacing: float = DEFAULT_SPACING
    t_sync: float = DEFAULT_T_SYNC
    condition_limit: float = 1e14
    delays: dict = field(default_factory=lambda: {name: 0.0 for name in SENSOR_NAMES})

    def delay(self, sensor: str) -> float:
        return float(self.delays.get(sensor, 0.0))


@dataclass
class PriorSigmas:
    """Standard deviations of the prior placed on the first state."""

    position: float = 1.0
    rotation: float = 0.01
    velocity: float = 0.2
    angular_rate: float = 0.01
    bias_acc: float = 0.1
    bias_gyro: float = 0.01
    clock_bias: float = 10.0
    clock_drift: float = 1.0

    def diagonal(self) -> np.ndarray:
        return np.array(
            [self.position] * 3 + [self.rotation] * 3 + [self.velocity] * 3 + [self.angular_rate] * 3
            + [self.bias_acc] * 3 + [self.bias_gyro] * 3 + [self.clock_bias, self.clock_drift]
        )


@dataclass
class EstimatorConfig:
    fusion: str = "tight"
    gp_model: GpModel = GpModel.WNOJ
    jacobian_mode: str = "exact"
    qc: tuple = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1)
    loss: RobustLoss = field(default_factory=RobustLoss)
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    use_imu: bool = True
    use_gnss: bool = True
    use_pvt: bool = True
    use_odometry: bool = True
    use_speed: bool = True
    lever_gnss: tuple = (0.0, 0.0, 0.0)
    lever_speed: tuple = (0.0, 0.0, 0.0)
    lambda_pr: float = 10.0**4.5
    lambda_doppler: float = 0.01 * 10.0**4.5
    clock_q_bias: float = 0.01
    clock_q_drift: float = 1e-4
    prior: PriorSigmas = field(default_factory=PriorSigmas)
    cache_seconds: float = 10.0
    input_window: float = 0.05
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.gp_model = GpModel(str(getattr(self.gp_model, "value", self.gp_model)).lower())
        validate_estimator(self)

    @property
    def tight(self) -> bool:
        return self.fusion == "tight"

    def active_mask(self) -> np.ndarray:
        """Per-state tangent dimensions that are estimated."""
        mask = np.ones(20, dtype=bool)
        if not self.tight:
            mask[18:20] = False
        if not self.use_imu:
            mask[12:18] = False
        return mask


def validate_estimator(c: EstimatorConfig) -> None:
    def need(cond, path, msg):
        if not cond:
            raise ConfigError(f"{path}: {msg}")

    need(c.fusion in FUSION_MODES, "fusion", f"must be one of {FUSION_MODES}")
    need(c.jacobian_mode in JACOBIAN_MODES, "jacobian_mode", f"must be one of {JACOBIAN_MODES}")
    need(len(c.qc) == 6 and all(q > 0 for q in c.qc), "qc", "needs six positive spectral densities")
    s = c.solver
    need(s.max_iterations >= 1, "solver.max_iterations", "must be >= 1")
    need(s.lag_seconds > 0.0, "solver.lag_seconds", "must be positive")
    need(s.spacing > 0.0, "solver.spacing", "must be positive")
    need(0.0 <= s.t_sync < 0.5 * s.spacing, "solver.t_sync", "must lie in [0, spacing / 2)")
    need(s.opt_frequency_hz > 0.0, "solver.opt_frequency_hz", "must be positive")
    need(c.cache_seconds > 0.0, "cache_seconds", "must be positive")
    if c.tight:
        need(c.use_gnss, "use_gnss", "tight fusion requires the raw GNSS stream")
    else:
        need(c.use_pvt, "use_pvt", "loose fusion requires the PVT stream")
