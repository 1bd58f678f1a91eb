"""WGS84 conversions between geodetic (LLH), ECEF, NED and ENU coordinates.

All functions accept arrays with arbitrary leading batch dimensions; the last
axis holds the three coordinates. Angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAVITY_MAGNITUDE = 9.80665
DEGENERATE_NORM = 1e3


class DegenerateInput(ValueError):
    """ECEF point too close to the Earth's center for a geodetic inverse."""


@dataclass(frozen=True)
class Wgs84:
    ecc: float = 0.08181919
    a_m: float = 6378137.0

    @property
    def e2(self) -> float:
        return self.ecc * self.ecc

    @property
    def b_m(self) -> float:
        return self.a_m * np.sqrt(1.0 - self.e2)


WGS84 = Wgs84()


def normalize_longitude(lon):
    """Wrap longitude into (-pi, pi]."""
    out = np.mod(np.asarray(lon, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out <= -np.pi, out + 2.0 * np.pi, out)


def transverse_radius(lat, ellipsoid: Wgs84 = WGS84):
    s = np.sin(lat)
    return ellipsoid.a_m / np.sqrt(1.0 - ellipsoid.e2 * s * s)


def llh_to_ecef(llh, ellipsoid: Wgs84 = WGS84) -> np.ndarray:
    llh = np.asarray(llh, dtype=float)
    lat, lon, h = llh[..., 0], llh[..., 1], llh[..., 2]
    Re = transverse_radius(lat, ellipsoid)
    cl = np.cos(lat)
    x = (Re + h) * cl * np.cos(lon)
    y = (Re + h) * cl * np.sin(lon)
    z = (Re * (1.0 - ellipsoid.e2) + h) * np.sin(lat)
    return np.stack([x, y, z], axis=-1)


def ecef_to_llh(xyz, ellipsoid: Wgs84 = WGS84) -> np.ndarray:
    """Closed-form Heikkinen inverse. On the polar axis longitude is 0."""
    xyz = np.asarray(xyz, dtype=float)
    if np.any(np.linalg.norm(xyz, axis=-1) < DEGENERATE_NORM):
        raise DegenerateInput("ECEF point within 1 km of the Earth's center")
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    a, e2 = ellipsoid.a_m, ellipsoid.e2
    b = ellipsoid.b_m
    ep2 = (a * a - b * b) / (b * b)
    p = np.hypot(x, y)
    F = 54.0 * b * b * z * z
    G = p * p + (1.0 - e2) * z * z - e2 * (a * a - b * b)
    c = e2 * e2 * F * p * p / G**3
    s = np.cbrt(1.0 + c + np.sqrt(np.maximum(c * c + 2.0 * c, 0.0)))
    k = s + 1.0 + 1.0 / s
    P = F / (3.0 * k * k * G * G)
    Q = np.sqrt(1.0 + 2.0 * e2 * e2 * P)
    r0 = -P * e2 * p / (1.0 + Q) + np.sqrt(
        np.maximum(0.5 * a * a * (1.0 + 1.0 / Q) - P * (1.0 - e2) * z * z / (Q * (1.0 + Q)) - 0.5 * P * p * p, 0.0)
    )
    dp = p - e2 * r0
    U = np.hypot(dp, z)
    V = np.sqrt(dp * dp + (1.0 - e2) * z * z)
    z0 = b * b * z / (a * V)
    h = U * (1.0 - b * b / (a * V))
    lat = np.arctan2(z + ep2 * z0, p)
    lon = np.where(p > 0.0, np.arctan2(y, x), 0.0)
    return np.stack([lat, lon, h], axis=-1)


def dcm_ecef_to_ned(origin) -> np.ndarray:
    """Rotation taking ECEF vectors into the NED frame at ``origin`` (lat, lon[, h])."""
    origin = np.asarray(origin, dtype=float)
    sp, cp = np.sin(origin[..., 0]), np.cos(origin[..., 0])
    sl, cl = np.sin(origin[..., 1]), np.cos(origin[..., 1])
    zero = np.zeros_like(sp)
    rows = [
        np.stack([-sp * cl, -sp * sl, cp], axis=-1),
        np.stack([-sl, cl, zero], axis=-1),
        np.stack([-cp * cl, -cp * sl, -sp], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def dcm_ecef_to_enu(origin) -> np.ndarray:
    """Rotation taking ECEF vectors into the ENU frame at ``origin`` (lat, lon[, h])."""
    origin = np.asarray(origin, dtype=float)
    sp, cp = np.sin(origin[..., 0]), np.cos(origin[..., 0])
    sl, cl = np.sin(origin[..., 1]), np.cos(origin[..., 1])
    zero = np.zeros_like(sp)
    rows = [
        np.stack([-sl, cl, zero], axis=-1),
        np.stack([-sp * cl, -sp * sl, cp], axis=-1),
        np.stack([cp * cl, cp * sl, sp], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def ecef_to_enu(xyz, origin_llh) -> np.ndarray:
    """ENU coordinates of ECEF points relative to a geodetic origin."""
    origin_llh = np.asarray(origin_llh, dtype=float)
    d = np.asarray(xyz, dtype=float) - llh_to_ecef(origin_llh)
    return d @ dcm_ecef_to_enu(origin_llh).T


def enu_to_ecef(enu, origin_llh) -> np.ndarray:
    origin_llh = np.asarray(origin_llh, dtype=float)
    return llh_to_ecef(origin_llh) + np.asarray(enu, dtype=float) @ dcm_ecef_to_enu(origin_llh)


def gravity_ecef(p) -> np.ndarray:
    """Central gravity of constant magnitude pointing at the Earth's center."""
    p = np.asarray(p, dtype=float)
    return -GRAVITY_MAGNITUDE * p / np.linalg.norm(p, axis=-1, keepdims=True)


def elevation_azimuth(receiver_ecef, sat_ecef):
    """Elevation and azimuth of satellites seen from a receiver, against the ellipsoid normal."""
    receiver_ecef = np.asarray(receiver_ecef, dtype=float)
    llh = ecef_to_llh(receiver_ecef)
    d = np.asarray(sat_ecef, dtype=float) - receiver_ecef
    enu = d @ dcm_ecef_to_enu(llh).T
    el = np.arctan2(enu[..., 2], np.hypot(enu[..., 0], enu[..., 1]))
    az = np.arctan2(enu[..., 0], enu[..., 1])
    return el, az
