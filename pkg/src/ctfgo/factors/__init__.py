"""Measurement forward models and factor residuals with analytic Jacobians."""

from .gnss import clock_covariance, clock_residual, cn0_variance, prdo_residual, pvt_residual
from .imu import (
    ImuNoise,
    Preintegrated,
    StaleBiasLinearization,
    bias_covariance,
    bias_residual,
    imu_residual,
    preintegrate,
)
from .odometry import between_pose_residual, velocity2d_residual
from .robust import RobustLoss, apply_robust
from .types import (
    STATE_DIM,
    DegenerateGeometry,
    EmptyStream,
    GnssEpoch,
    ImuSample,
    NavState,
    NonMonotoneTime,
    OdometryIncrement,
    PvtSolution,
    SpeedSample,
)

__all__ = [
    "STATE_DIM",
    "DegenerateGeometry",
    "EmptyStream",
    "GnssEpoch",
    "ImuNoise",
    "ImuSample",
    "NavState",
    "NonMonotoneTime",
    "OdometryIncrement",
    "Preintegrated",
    "PvtSolution",
    "RobustLoss",
    "SpeedSample",
    "StaleBiasLinearization",
    "apply_robust",
    "between_pose_residual",
    "bias_covariance",
    "bias_residual",
    "clock_covariance",
    "clock_residual",
    "cn0_variance",
    "imu_residual",
    "preintegrate",
    "prdo_residual",
    "pvt_residual",
    "velocity2d_residual",
]
