"""Measurement and state containers shared by factors, graph and simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import lie

# Column layout of the 20-dim state tangent.
POSE = slice(0, 6)
POS = slice(0, 3)
ROT = slice(3, 6)
VEL = slice(6, 12)
NU = slice(6, 9)
OMEGA = slice(9, 12)
BA = slice(12, 15)
BG = slice(15, 18)
CLK = slice(18, 20)
STATE_DIM = 20

SPEED_OF_LIGHT = 299792458.0
L1_WAVELENGTH = SPEED_OF_LIGHT / 1575.42e6


class DegenerateGeometry(ValueError):
    """Antenna and satellite too close for a meaningful line of sight."""


class EmptyStream(ValueError):
    pass


class NonMonotoneTime(ValueError):
    pass


@dataclass
class NavState:
    """Per-timestamp estimation unknown.

    ``pose`` maps body to ECEF coordinates, ``velocity`` is body-centric
    ``[nu, omega]`` and ``accel_input`` its derivative taken from the IMU.
    ``clock`` holds receiver clock bias and drift in meters and m/s.
    """

    timestamp: float
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(6))
    accel_input: np.ndarray = field(default_factory=lambda: np.zeros(6))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clock: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def world_velocity(self) -> np.ndarray:
        return self.rotation @ self.velocity[:3]

    def copy(self) -> "NavState":
        return NavState(
            self.timestamp,
            self.pose.copy(),
            self.velocity.copy(),
            self.accel_input.copy(),
            self.bias_acc.copy(),
            self.bias_gyro.copy(),
            self.clock.copy(),
        )

    def retract(self, delta: np.ndarray) -> "NavState":
        """Apply a 20-dim tangent increment (right perturbation on the pose)."""
        out = self.copy()
        out.pose = self.pose @ lie.exp_se3(delta[POSE])
        out.velocity = self.velocity + delta[VEL]
        out.bias_acc = self.bias_acc + delta[BA]
        out.bias_gyro = self.bias_gyro + delta[BG]
        out.clock = self.clock + delta[CLK]
        return out


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class GnssEpoch:
    """Pre-processed raw observations of one receiver epoch.

    Arrays are indexed by satellite. Atmospheric delays and satellite clock
    terms are assumed removed already.
    """

    t: float
    sat_ids: np.ndarray
    sat_pos: np.ndarray
    sat_vel: np.ndarray
    pseudorange: np.ndarray
    doppler_hz: np.ndarray
    cn0_dbhz: np.ndarray
    elevation: np.ndarray
    wavelength: float = L1_WAVELENGTH

    def __len__(self) -> int:
        return len(self.sat_ids)


@dataclass(frozen=True)
class PvtSolution:
    t: float
    position: np.ndarray
    velocity_ned: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class OdometryIncrement:
    """Relative motion ``delta = (T_i^-1 T_j)^-1`` between two times."""

    t_i: float
    t_j: float
    delta: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class SpeedSample:
    t: float
    v2d: np.ndarray
    std: np.ndarray = field(default_factory=lambda: np.full(2, 0.05))
