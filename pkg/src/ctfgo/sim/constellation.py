"""Idealized satellite constellation on circular orbits.

Orbits are expressed directly in the Earth-fixed frame (Earth rotation is not
modeled), which keeps simulator and estimator consistent without Sagnac terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geodesy

GPS_ORBIT_RADIUS = 26_578_000.0
EARTH_MU = 3.986004418e14
CONSTELLATION_MODES = ("visible", "walker", "fixed")


@dataclass(frozen=True)
class Constellation:
    """Satellites on circles ``r (cos(n t + phase) e1 + sin(n t + phase) e2)``."""

    sat_ids: np.ndarray
    radius: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    rate: np.ndarray
    phase: np.ndarray

    def __len__(self) -> int:
        return len(self.sat_ids)

    def positions(self, t: float) -> np.ndarray:
        a = self.rate * t + self.phase
        return self.radius[:, None] * (np.cos(a)[:, None] * self.e1 + np.sin(a)[:, None] * self.e2)

    def velocities(self, t: float) -> np.ndarray:
        a = self.rate * t + self.phase
        return (self.radius * self.rate)[:, None] * (-np.sin(a)[:, None] * self.e1 + np.cos(a)[:, None] * self.e2)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _ray_to_sphere(origin: np.ndarray, direction: np.ndarray, radius: float) -> np.ndarray:
    b = direction @ origin
    c = origin @ origin - radius * radius
    return origin + (-b + np.sqrt(b * b - c)) * direction


def visible_constellation(origin_llh, n_sats: int, rng: np.random.Generator, radius: float = GPS_ORBIT_RADIUS,
                          min_elevation_deg: float = 20.0, static: bool = False) -> Constellation:
    """Satellites placed at spread azimuths and random elevations above ``origin``.

    Azimuths are evenly spaced with jitter; one satellite is kept near zenith
    for a well-conditioned vertical. With ``static`` the satellites do not move.
    """
    if n_sats < 1:
        raise ValueError("need at least one satellite")
    origin = geodesy.llh_to_ecef(origin_llh)
    C_en = geodesy.dcm_ecef_to_enu(origin_llh)
    az = 2 * np.pi * np.arange(n_sats) / n_sats + rng.uniform(-0.3, 0.3, n_sats)
    el = np.deg2rad(rng.uniform(min_elevation_deg, 75.0, n_sats))
    el[0] = np.deg2rad(rng.uniform(75.0, 88.0))
    enu = np.stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)], axis=-1)
    dirs = enu @ C_en
    pos = np.array([_ray_to_sphere(origin, d, radius) for d in dirs])
    e1 = _unit(pos)
    e2 = _unit(np.cross(e1, _unit(rng.normal(size=(n_sats, 3)))))
    rate = np.zeros(n_sats) if static else np.full(n_sats, np.sqrt(EARTH_MU / radius**3))
    return Constellation(np.arange(1, n_sats + 1), np.full(n_sats, radius), e1, e2, rate, np.zeros(n_sats))


def walker_constellation(n_planes: int = 6, per_plane: int = 4, inclination_deg: float = 55.0,
                         radius: float = GPS_ORBIT_RADIUS, rng: np.random.Generator | None = None) -> Constellation:
    """Walker-delta style constellation; visibility depends on the receiver location."""
    inc = np.deg2rad(inclination_deg)
    ids, e1s, e2s, phases = [], [], [], []
    offset = 0.0 if rng is None else rng.uniform(0, 2 * np.pi)
    for p in range(n_planes):
        raan = 2 * np.pi * p / n_planes + offset
        node = np.array([np.cos(raan), np.sin(raan), 0.0])
        normal = np.array([np.sin(inc) * np.sin(raan), -np.sin(inc) * np.cos(raan), np.cos(inc)])
        for k in range(per_plane):
            ids.append(p * per_plane + k + 1)
            e1s.append(node)
            e2s.append(np.cross(normal, node))
            phases.append(2 * np.pi * k / per_plane + np.pi * p / (n_planes * per_plane))
    n = len(ids)
    return Constellation(np.array(ids), np.full(n, radius), np.array(e1s), np.array(e2s),
                         np.full(n, np.sqrt(EARTH_MU / radius**3)), np.array(phases))


def make_constellation(mode: str, origin_llh, n_sats: int, seed: int) -> Constellation:
    rng = np.random.default_rng(seed)
    if mode == "visible":
        return visible_constellation(origin_llh, n_sats, rng)
    if mode == "fixed":
        return visible_constellation(origin_llh, n_sats, rng, static=True)
    if mode == "walker":
        return walker_constellation(rng=rng)
    raise ValueError(f"unknown constellation mode {mode!r}; expected one of {CONSTELLATION_MODES}")
