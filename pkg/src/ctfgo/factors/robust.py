"""Robust m-estimators applied as iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_KINDS = ("none", "cauchy", "huber")


@dataclass(frozen=True)
class RobustLoss:
    kind: str = "none"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")
        if not self.scale > 0.0:
            raise ValueError("loss scale must be positive")

    def rho(self, s: np.ndarray) -> np.ndarray:
        """Loss of the whitened squared norm ``s``; equals ``s`` near zero."""
        s = np.asarray(s, dtype=float)
        c2 = self.scale * self.scale
        if self.kind == "cauchy":
            return c2 * np.log1p(s / c2)
        if self.kind == "huber":
            r = np.sqrt(s)
            return np.where(r <= self.scale, s, 2.0 * self.scale * r - c2)
        return s

    def weight(self, s: np.ndarray) -> np.ndarray:
        """IRLS weight ``rho'(s)`` for whitened squared norm ``s``."""
        s = np.asarray(s, dtype=float)
        if self.kind == "cauchy":
            return 1.0 / (1.0 + s / (self.scale * self.scale))
        if self.kind == "huber":
            r = np.sqrt(s)
            return np.where(r <= self.scale, 1.0, self.scale / np.maximum(r, 1e-300))
        return np.ones_like(s)


def whiten(residual: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    """``L^-1 r`` with ``covariance = L L^T``; batched over leading axes."""
    L = np.linalg.cholesky(covariance)
    return np.linalg.solve(L, residual[..., None])[..., 0]


def apply_robust(residual, covariance, loss: RobustLoss = RobustLoss()):
    """Whitened residual scaled by the square root of the IRLS weight.

    Returns ``(weighted_residual, weight)``.
    """
    e = whiten(np.asarray(residual, dtype=float), np.asarray(covariance, dtype=float))
    w = loss.weight(np.sum(e * e, axis=-1))
    return np.sqrt(w)[..., None] * e, w
