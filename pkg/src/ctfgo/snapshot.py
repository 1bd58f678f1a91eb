"""Memoryless single-epoch weighted least squares from pseudoranges.

Used as the snapshot baseline: every epoch is solved on its own for antenna
position and receiver clock bias, with no motion model and no other sensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors.types import GnssEpoch


class TooFewSatellites(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotFix:
    t: float
    position: np.ndarray
    clock_bias: float
    covariance: np.ndarray
    iterations: int


def wls_fix(epoch: GnssEpoch, lam_pr: float, x0=None, max_iter: int = 20, tol: float = 1e-8) -> SnapshotFix:
    """Gauss-Newton on ``rho_k = |s_k - p| + c`` with weights ``10^(cn0/10) / lam_pr``."""
    n = len(epoch.pseudorange)
    if n < 4:
        raise TooFewSatellites(f"need >= 4 satellites, got {n}")
    sat = np.asarray(epoch.sat_pos, float)
    rho = np.asarray(epoch.pseudorange, float)
    w = 10.0 ** (np.asarray(epoch.cn0_dbhz, float) / 10.0) / lam_pr
    x = np.zeros(4) if x0 is None else np.asarray(x0, float).copy()
    for it in range(1, max_iter + 1):
        d = sat - x[:3]
        r = np.linalg.norm(d, axis=-1)
        G = np.hstack([-d / r[:, None], np.ones((n, 1))])
        y = rho - (r + x[3])
        N = G.T @ (w[:, None] * G)
        dx = np.linalg.solve(N, G.T @ (w * y))
        x += dx
        if np.linalg.norm(dx) < tol:
            break
    return SnapshotFix(epoch.t, x[:3].copy(), float(x[3]), np.linalg.inv(N), it)


def wls_track(epochs, lam_pr: float) -> list[SnapshotFix]:
    """Solve every epoch with at least four satellites, warm-starting from the previous fix."""
    out, x = [], None
    for ep in epochs:
        if len(ep.pseudorange) < 4:
            continue
        fix = wls_fix(ep, lam_pr, x)
        x = np.concatenate([fix.position, [fix.clock_bias]])
        out.append(fix)
    return out
