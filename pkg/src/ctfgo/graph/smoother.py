"""Fixed-lag time-centric factor-graph smoother.

States sit on the a-priori timeline. Every adjacent pair carries a GP motion
prior, an IMU factor and a bias random-walk factor (plus a clock factor in
tight fusion). Sensor measurements are attached to *slots*: either a state
(synchronized) or a GP-interpolated state between two anchors. All factors
are evaluated in batches and accumulated into a dense normal-equation system
over the window, solved by Levenberg-Marquardt; states older than the lag are
folded into a Gaussian boundary prior by Schur complement.
"""

from __future__ import annotations

import bisect
import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .. import geodesy, gp, lie
from ..factors import gnss as gnss_f
from ..factors import imu as imu_f
from ..factors import odometry as odo_f
from ..factors.robust import RobustLoss
from ..factors.types import (
    STATE_DIM,
    GnssEpoch,
    NavState,
    OdometryIncrement,
    PvtSolution,
    SpeedSample,
)
from .config import EstimatorConfig
from .timeline import TIME_EPS, NotInitialized, RoutingDecision, RoutingKind, StateTimeline

log = logging.getLogger(__name__)

SENSOR_ORDER = {"gnss": 0, "pvt": 1, "odometry": 2, "speed": 3}
EIG_FLOOR = 1e-10
NOISE_GAIN = 1e-2
# whitened residuals of stiff factors move by up to ~1e-3 per ECEF ulp (~1e-9 m)
WHITENED_QUANTUM = 1e-3


class SolverDiverged(RuntimeError):
    pass


class IllConditioned(RuntimeWarning):
    pass


class BufferOverflow(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# records


@dataclass
class _Record:
    """A routed measurement; ``slots`` are keys ``(anchor_id, tau)`` with tau=None for sync."""

    key: tuple
    sensor: str
    slots: tuple
    data: object


@dataclass
class LinearPrior:
    """Gaussian prior ``|A (x - x0) + b|^2`` on a few states (tangent at ``x0``)."""

    state_ids: list
    anchors: list
    A: np.ndarray
    b: np.ndarray

    def delta(self, states: list[NavState]) -> tuple[np.ndarray, list[np.ndarray]]:
        parts, pose_jacs = [], []
        for s, x0 in zip(states, self.anchors):
            xi = lie.log_se3(lie.pose_inverse(x0.pose) @ s.pose)
            parts.append(np.concatenate([xi, s.velocity - x0.velocity, s.bias_acc - x0.bias_acc,
                                         s.bias_gyro - x0.bias_gyro, s.clock - x0.clock]))
            pose_jacs.append(lie.right_jacobian_inv_se3(xi))
        return np.concatenate(parts), pose_jacs


@dataclass
class OptimizationReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = False
    ill_conditioned: bool = False
    seconds: float = 0.0
    n_states: int = 0


@dataclass
class _Pair:
    """Per adjacent pair data: preintegrated IMU (if any)."""

    pre: object = None


def _rounding_floor(cost: float) -> float:
    """Cost change indistinguishable from floating-point noise at this cost level."""
    return WHITENED_QUANTUM * np.sqrt(max(cost, 0.0)) + 1e-18


def _sqrt_info(cov: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    eye = np.broadcast_to(np.eye(cov.shape[-1]), cov.shape)
    return np.linalg.solve(L, eye)


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def _masked_system(acc: "_Accumulator", act: np.ndarray):
    """Dense ``H, g`` with inactive dimensions pinned, plus the upper bandwidth in scalars."""
    H, g = acc.dense()
    off = ~act
    H[off, :] = 0.0
    H[:, off] = 0.0
    H[off, off] = 1.0
    g = np.where(act, g, 0.0)
    return H, g, min((acc.bandwidth + 1) * STATE_DIM - 1, H.shape[0] - 1)


def _upper_bands(H: np.ndarray, u: int) -> np.ndarray:
    """Upper banded storage ``ab[u + i - j, j] = H[i, j]``."""
    n = H.shape[0]
    ab = np.zeros((u + 1, n))
    for k in range(u + 1):
        ab[u - k, k:] = np.diagonal(H, k)
    return ab


def _retract_all(states: list[NavState], delta: np.ndarray) -> list[NavState]:
    """Retract every window state by its 20-dim slice of ``delta`` (batched exponentials)."""
    d = delta.reshape(len(states), STATE_DIM)
    E = lie.exp_se3(d[:, 0:6])
    out = []
    for k, s in enumerate(states):
        out.append(NavState(s.timestamp, s.pose @ E[k], s.velocity + d[k, 6:12], s.accel_input,
                            s.bias_acc + d[k, 12:15], s.bias_gyro + d[k, 15:18], s.clock + d[k, 18:20]))
    return out


def _segment_sum(idx: np.ndarray, vals: np.ndarray):
    """Unique indices and the sums of ``vals`` rows sharing each index."""
    if idx.size < 2 or np.all(idx[1:] > idx[:-1]):
        return idx, vals
    order = np.argsort(idx, kind="stable")
    s = idx[order]
    starts = np.flatnonzero(np.concatenate([[True], s[1:] != s[:-1]]))
    return s[starts], np.add.reduceat(vals[order], starts, axis=0)


def _t(M):
    return np.swapaxes(M, -1, -2)


class _Accumulator:
    """Block-banded normal equations ``sum J^T J`` and ``sum J^T e`` over window states.

    ``bands[d][p]`` holds the block coupling states ``p`` and ``p + d``.
    """

    def __init__(self, n: int):
        self.n = n
        self.bands = {0: np.zeros((n, STATE_DIM, STATE_DIM))}
        self.G = np.zeros((n, STATE_DIM))

    def add_grad(self, p, gv):
        u, s = _segment_sum(np.asarray(p), gv)
        self.G[u] += s

    def add_block(self, p, q, blk):
        """Add ``blk[k]`` to block ``(p[k], q[k])`` (and its transpose to ``(q, p)``)."""
        p, q = np.asarray(p), np.asarray(q)
        swap = p > q
        if np.any(swap):
            blk = np.where(swap[:, None, None], _t(blk), blk)
            p, q = np.where(swap, q, p), np.where(swap, p, q)
        d = q - p
        for off in np.unique(d):
            m = d == off
            u, s = _segment_sum(p[m], blk[m])
            if off not in self.bands:
                self.bands[off] = np.zeros((self.n - off, STATE_DIM, STATE_DIM))
            self.bands[off][u] += s

    def add_legs(self, legs, e):
        """Factors with whitened Jacobian legs ``(positions (K,), J (K, m, 20))`` and errors ``e``."""
        for p, Jp in legs:
            self.add_grad(p, np.einsum("kmi,km->ki", Jp, e))
        for a, (p, Jp) in enumerate(legs):
            for b in range(a, len(legs)):
                q, Jq = legs[b]
                blk = _t(Jp) @ Jq
                if b == a:
                    self.add_block(p, p, blk)
                else:
                    # (p, q) and (q, p); coinciding states need both halves on the diagonal
                    same = p == q
                    if np.any(same):
                        self.add_block(p[same], p[same], blk[same] + _t(blk[same]))
                    if np.any(~same):
                        self.add_block(p[~same], q[~same], blk[~same])

    def add_dense(self, positions, J, e):
        """Dense factor over a few states: ``J`` (m, len(positions)*20)."""
        Jb = J.reshape(J.shape[0], len(positions), STATE_DIM)
        for a, p in enumerate(positions):
            self.G[p] += Jb[:, a, :].T @ e
            for b in range(a, len(positions)):
                blk = Jb[:, a, :].T @ Jb[:, b, :]
                if b == a:
                    self.add_block(np.array([p]), np.array([p]), blk[None])
                else:
                    self.add_block(np.array([p]), np.array([positions[b]]), blk[None])

    @property
    def bandwidth(self) -> int:
        return max(self.bands)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        H4 = np.zeros((n, STATE_DIM, n, STATE_DIM))
        ar = np.arange(n)
        for off, blk in self.bands.items():
            H4[ar[: n - off], :, ar[off:], :] = blk
            if off:
                H4[ar[off:], :, ar[: n - off], :] = _t(blk)
        return H4.reshape(n * STATE_DIM, n * STATE_DIM), self.G.reshape(-1)


class _Problem:
    """Factor arrays frozen for one optimization (or marginalization) pass."""

    def __init__(self, sm: "Smoother", ids: list[int], records: list[_Record], pair_mask: np.ndarray,
                 priors: list[LinearPrior]):
        cfg = sm.config
        self.cfg = cfg
        self.ids = ids
        self.pos = {sid: k for k, sid in enumerate(ids)}
        self.spacing = sm.timeline.spacing
        self.pair_mask = pair_mask
        self.priors = priors
        self.loss = cfg.loss
        self.quadratic = RobustLoss()
        n = len(ids)
        states = [sm.states[i] for i in ids]

        # motion factors on adjacent pairs
        self.pair_idx = np.flatnonzero(pair_mask)
        dt = self.spacing
        self.gp_sqrt = _sqrt_info(gp.prior_covariance(dt, np.asarray(cfg.qc), cfg.gp_model))
        self.wd = np.array([s.accel_input for s in states]) if n else np.zeros((0, 6))
        if cfg.use_imu and self.pair_idx.size:
            pres = [sm.pairs[ids[k]].pre for k in self.pair_idx]
            self.pre = imu_f.stack_preintegrated(pres)
            self.imu_sqrt = _sqrt_info(self.pre.covariance)
            self.bias_sqrt = _sqrt_info(imu_f.bias_covariance(np.full(self.pair_idx.size, dt), cfg.imu_noise))
        if cfg.tight:
            self.clock_sqrt = _sqrt_info(gnss_f.clock_covariance(np.array(dt), cfg.clock_q_bias, cfg.clock_q_drift))

        # slots
        slot_keys = []
        slot_of = {}
        for rec in records:
            for key in rec.slots:
                if key not in slot_of:
                    slot_of[key] = len(slot_keys)
                    slot_keys.append(key)
        self.slot_keys = slot_keys
        anchor = np.array([self.pos[k[0]] for k in slot_keys], dtype=int)
        tau = np.array([0.0 if k[1] is None else k[1] for k in slot_keys])
        self.interp = np.array([k[1] is not None for k in slot_keys], dtype=bool)
        self.slot_a = anchor
        self.slot_b = np.where(self.interp, anchor + 1, anchor)
        self.slot_tau = tau
        self.slot_s = tau / dt
        slot_t = np.array([sm.timeline.time_of(k[0]) + (k[1] or 0.0) for k in slot_keys])
        # frozen angular-rate input at each slot time (bias-corrected with the current estimate)
        bg = np.array([(1 - s) * states[a].bias_gyro + s * states[b].bias_gyro
                       for a, b, s in zip(self.slot_a, self.slot_b, self.slot_s)]).reshape(-1, 3)
        self.slot_gyro = sm.gyro_at(slot_t) - bg if len(slot_keys) else np.zeros((0, 3))

        # measurement groups
        by = {"gnss": [], "pvt": [], "odometry": [], "speed": []}
        for rec in records:
            by[rec.sensor].append(rec)
        self._build_gnss(by["gnss"], slot_of)
        self._build_pvt(by["pvt"], slot_of)
        self._build_speed(by["speed"], slot_of)
        self._build_odometry(by["odometry"], slot_of)

    # -- group builders ----------------------------------------------------

    def _build_gnss(self, recs, slot_of):
        self.gnss = None
        rows = [(slot_of[r.slots[0]], r.data) for r in recs if len(r.data)]
        if not rows:
            return
        slot = np.concatenate([np.full(len(ep), s) for s, ep in rows])
        cat = lambda name: np.concatenate([getattr(ep, name) for _, ep in rows])
        var_pr, var_do = gnss_f.cn0_variance(cat("cn0_dbhz"), self.cfg.lambda_pr, self.cfg.lambda_doppler)
        wl = np.concatenate([np.full(len(ep), ep.wavelength) for _, ep in rows])
        self.gnss = dict(slot=slot, sat_pos=cat("sat_pos"), sat_vel=cat("sat_vel"), pr=cat("pseudorange"),
                         dop=cat("doppler_hz"), wl=wl,
                         w=np.stack([1 / np.sqrt(var_pr), 1 / np.sqrt(var_do)], axis=-1))

    def _build_pvt(self, recs, slot_of):
        self.pvt = None
        if not recs:
            return
        self.pvt = dict(slot=np.array([slot_of[r.slots[0]] for r in recs]),
                        pos=np.array([r.data.position for r in recs]),
                        vel=np.array([r.data.velocity_ned for r in recs]),
                        w=1.0 / np.array([r.data.std for r in recs]))

    def _build_speed(self, recs, slot_of):
        self.speed = None
        if not recs:
            return
        self.speed = dict(slot=np.array([slot_of[r.slots[0]] for r in recs]),
                          v=np.array([r.data.v2d for r in recs]),
                          w=1.0 / np.array([r.data.std for r in recs]))

    def _build_odometry(self, recs, slot_of):
        self.odo = None
        if not recs:
            return
        self.odo = dict(si=np.array([slot_of[r.slots[0]] for r in recs]),
                        sj=np.array([slot_of[r.slots[1]] for r in recs]),
                        delta=np.array([r.data.delta for r in recs]),
                        sqrt=_sqrt_info(np.array([r.data.covariance for r in recs])))

    # -- evaluation --------------------------------------------------------

    def _slots(self, states, jac: bool):
        S = len(self.slot_keys)
        T = np.array([s.pose for s in states])
        w = np.array([s.velocity for s in states])
        ba = np.array([s.bias_acc for s in states])
        bg = np.array([s.bias_gyro for s in states])
        clk = np.array([s.clock for s in states])
        a, b, sfrac = self.slot_a, self.slot_b, self.slot_s[:, None]
        out = dict(
            T=T[a].copy(), w=w[a].copy(),
            ba=(1 - sfrac) * ba[a] + sfrac * ba[b],
            bg=(1 - sfrac) * bg[a] + sfrac * bg[b],
            clk=(1 - sfrac) * clk[a] + sfrac * clk[b],
        )
        Sa = Sb = None
        if jac:
            Sa = np.zeros((S, STATE_DIM, STATE_DIM))
            Sb = np.zeros((S, STATE_DIM, STATE_DIM))
            Sa[:, :12, :12] = np.eye(12)
            Sa[:, 12:, 12:] = (1 - sfrac)[:, :, None] * np.eye(8)
            Sb[:, 12:, 12:] = sfrac[:, :, None] * np.eye(8)
        m = np.flatnonzero(self.interp)
        if m.size:
            ua, inv = np.unique(a[m], return_inverse=True)
            ub = ua + 1
            Tq, wq, J = gp.query(T[ua], w[ua], self.wd[ua], T[ub], w[ub], self.wd[ub], self.spacing,
                                 self.slot_tau[m], self.cfg.gp_model, self.cfg.jacobian_mode, jacobians=jac,
                                 pair_index=inv.reshape(-1))
            out["T"][m] = Tq
            out["w"][m] = wq
            if jac:
                Sa[m, :12, :12] = 0.0
                Sa[m, :12, 0:6] = J["pose_i"]
                Sa[m, :12, 6:12] = J["vel_i"]
                Sb[m, :12, 0:6] = J["pose_j"]
                Sb[m, :12, 6:12] = J["vel_j"]
        return out, Sa, Sb

    def evaluate(self, states: list[NavState], jac: bool = True):
        """Total cost and (if ``jac``) the normal-equation accumulator at ``states``."""
        n = len(states)
        acc = _Accumulator(n) if jac else None
        cost = 0.0
        T = np.array([s.pose for s in states])
        w = np.array([s.velocity for s in states])
        cfg = self.cfg

        def whiten(r, J, sqrt, loss):
            nonlocal cost
            e = _mv(sqrt, r)
            s2 = np.sum(e * e, axis=-1)
            cost += float(np.sum(loss.rho(s2)))
            if acc is None:
                return None, None
            wgt = np.sqrt(loss.weight(s2))[:, None]
            return [wgt[:, :, None] * (sqrt @ Jx) for Jx in J], wgt * e

        def add(r, Jlegs, sqrt, loss):
            Jw, e = whiten(r, [Jx for _, Jx in Jlegs], sqrt, loss)
            if acc is not None:
                acc.add_legs([(p, Jx) for (p, _), Jx in zip(Jlegs, Jw)], e)

        k = self.pair_idx
        if k.size:
            i, j = k, k + 1
            r, J = gp.prior_residual(T[i], w[i], self.wd[i], T[j], w[j], np.full(k.size, self.spacing),
                                     cfg.gp_model, cfg.jacobian_mode)
            Ji = np.zeros((k.size, 12, STATE_DIM))
            Jj = np.zeros((k.size, 12, STATE_DIM))
            Ji[:, :, 0:6], Ji[:, :, 6:12] = J["pose_i"], J["vel_i"]
            Jj[:, :, 0:6], Jj[:, :, 6:12] = J["pose_j"], J["vel_j"]
            add(r, [(i, Ji), (j, Jj)], self.gp_sqrt, self.quadratic)
            if cfg.use_imu:
                ba = np.array([s.bias_acc for s in states])
                bg = np.array([s.bias_gyro for s in states])
                r, Ji, Jj = imu_f.imu_residual(T[i], w[i, :3], ba[i], bg[i], T[j], w[j, :3], self.pre, check_bias=False)
                add(r, [(i, Ji), (j, Jj)], self.imu_sqrt, self.quadratic)
                r, Ji, Jj = imu_f.bias_residual(ba[i], bg[i], ba[j], bg[j])
                add(r, [(i, Ji), (j, Jj)], self.bias_sqrt, self.quadratic)
            if cfg.tight:
                clk = np.array([s.clock for s in states])
                r, Ji, Jj = gnss_f.clock_residual(clk[i], clk[j], np.full(k.size, self.spacing))
                add(r, [(i, Ji), (j, Jj)], np.broadcast_to(self.clock_sqrt, (k.size, 2, 2)), self.quadratic)

        if self.slot_keys:
            sl, Sa, Sb = self._slots(states, jac)
            S = len(self.slot_keys)
            Hs = np.zeros((S, STATE_DIM, STATE_DIM)) if jac else None
            gs = np.zeros((S, STATE_DIM)) if jac else None

            def add_slot(slot, r, Jm, sqrt, loss):
                Jw, e = whiten(r, [Jm], sqrt, loss)
                if acc is None:
                    return
                u, h = _segment_sum(slot, _t(Jw[0]) @ Jw[0])
                Hs[u] += h
                u, v = _segment_sum(slot, np.einsum("kmi,km->ki", Jw[0], e))
                gs[u] += v

            if self.gnss is not None:
                g = self.gnss
                s = g["slot"]
                r, Jm = gnss_f.prdo_residual(sl["T"][s], sl["w"][s, :3], sl["clk"][s], g["sat_pos"], g["sat_vel"],
                                             g["pr"], g["dop"], g["wl"], np.asarray(cfg.lever_gnss), self.slot_gyro[s])
                add_slot(s, r, Jm, g["w"][:, :, None] * np.eye(2), self.loss)
            if self.pvt is not None:
                p = self.pvt
                s = p["slot"]
                r, Jm = gnss_f.pvt_residual(sl["T"][s], sl["w"][s, :3], p["pos"], p["vel"], np.asarray(cfg.lever_gnss),
                                            self.slot_gyro[s])
                add_slot(s, r, Jm, p["w"][:, :, None] * np.eye(6), self.loss)
            if self.speed is not None:
                v = self.speed
                s = v["slot"]
                r, Jm = odo_f.velocity2d_residual(sl["w"][s, :3], v["v"], np.asarray(cfg.lever_speed), self.slot_gyro[s])
                add_slot(s, r, Jm, v["w"][:, :, None] * np.eye(2), self.quadratic)
            if acc is not None:
                # chain slot information through the interpolation Jacobians
                a, b, m = self.slot_a, self.slot_b, self.interp
                acc.add_block(a, a, _t(Sa) @ Hs @ Sa)
                acc.add_grad(a, _mv(_t(Sa), gs))
                if np.any(m):
                    HSb = Hs[m] @ Sb[m]
                    acc.add_block(a[m], b[m], _t(Sa[m]) @ HSb)
                    acc.add_block(b[m], b[m], _t(Sb[m]) @ HSb)
                    acc.add_grad(b[m], _mv(_t(Sb[m]), gs[m]))
            if self.odo is not None:
                o = self.odo
                si, sj = o["si"], o["sj"]
                r, Ji, Jj = odo_f.between_pose_residual(sl["T"][si], sl["T"][sj], o["delta"])
                Jw, e = whiten(r, [Ji, Jj], o["sqrt"], self.quadratic)
                if acc is not None:
                    # synchronized slots have a zero second leg
                    legs = []
                    for slot, Jx in ((si, Jw[0]), (sj, Jw[1])):
                        legs += [(self.slot_a[slot], Jx @ Sa[slot]), (self.slot_b[slot], Jx @ Sb[slot])]
                    acc.add_legs(legs, e)

        for prior in self.priors:
            ps = [self.pos[sid] for sid in prior.state_ids]
            d, pose_jacs = prior.delta([states[p] for p in ps])
            r = prior.A @ d + prior.b
            cost += float(r @ r)
            if acc is not None:
                D = np.eye(d.size)
                for a_, Jp in enumerate(pose_jacs):
                    D[a_ * STATE_DIM:a_ * STATE_DIM + 6, a_ * STATE_DIM:a_ * STATE_DIM + 6] = Jp
                acc.add_dense(ps, prior.A @ D, r)
        return cost, acc


# ---------------------------------------------------------------------------
# smoother


class Smoother:
    """Fixed-lag time-centric smoother driven by :meth:`add_measurement` and :meth:`update`."""

    def __init__(self, config: EstimatorConfig | None = None):
        self.config = config or EstimatorConfig()
        self.timeline: StateTimeline | None = None
        self.states: dict[int, NavState] = {}
        self.pairs: dict[int, _Pair] = {}
        self.records: dict[tuple, _Record] = {}
        self.priors: list[LinearPrior] = []
        self.cache: dict[str, deque] = {}
        self.counts = {k: 0 for k in RoutingKind}
        self.evicted = 0
        self.history: list[NavState] = []
        self.reports: list[OptimizationReport] = []
        self._imu_t: list[float] = []
        self._imu_a: list[np.ndarray] = []
        self._imu_g: list[np.ndarray] = []
        self._imu_arr = None
        self._last_lin = None
        self._fits: dict = {}
        self._seq = 0
        self.mask = self.config.active_mask()

    # -- initialization and IMU buffer ---------------------------------------

    @property
    def initialized(self) -> bool:
        return self.timeline is not None

    def initialize(self, state: NavState, sigmas: np.ndarray | None = None) -> None:
        """Start the timeline at ``state.timestamp`` with a diagonal prior on state 0."""
        cfg = self.config
        self.timeline = StateTimeline(state.timestamp, cfg.solver.spacing)
        self.timeline.extend(1)
        s0 = state.copy()
        if not cfg.tight:
            s0.clock = np.zeros(2)
        self.states[0] = s0
        sig = cfg.prior.diagonal() if sigmas is None else np.asarray(sigmas, float)
        A = np.diag(np.where(self.mask, 1.0 / sig, 0.0))[self.mask]
        self.priors = [LinearPrior([0], [s0.copy()], A, np.zeros(A.shape[0]))]
        self._reroute_cache()

    def add_imu(self, t_stamped: float, accel, gyro) -> None:
        t = float(t_stamped) - self.config.solver.delay("imu")
        k = bisect.bisect_left(self._imu_t, t)
        if k < len(self._imu_t) and self._imu_t[k] == t:
            return
        # late samples are slotted in time order
        self._imu_t.insert(k, t)
        self._imu_a.insert(k, np.asarray(accel, float))
        self._imu_g.insert(k, np.asarray(gyro, float))
        self._imu_arr = None

    def add_imu_batch(self, t_stamped, accel, gyro) -> None:
        for t, a, g in zip(t_stamped, accel, gyro):
            self.add_imu(t, a, g)

    def _imu_arrays(self):
        if self._imu_arr is None:
            self._imu_arr = (np.array(self._imu_t), np.array(self._imu_a).reshape(-1, 3), np.array(self._imu_g).reshape(-1, 3))
        return self._imu_arr

    @property
    def imu_end(self) -> float:
        """Latest time covered by the IMU buffer (last sample held for one interval)."""
        if not self._imu_t:
            return -np.inf
        t = self._imu_arrays()[0]
        step = float(np.median(np.diff(t[-50:]))) if t.size > 1 else 0.0
        return t[-1] + step

    def gyro_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, float))
        if not self._imu_t:
            return np.zeros(t.shape + (3,))
        ti, _, gi = self._imu_arrays()
        k = np.clip(np.searchsorted(ti, t + TIME_EPS, side="right") - 1, 0, ti.size - 1)
        return gi[k]

    def _imu_slice(self, t_i: float, t_j: float):
        ti, ai, gi = self._imu_arrays()
        lo = max(int(np.searchsorted(ti, t_i + TIME_EPS, side="right")) - 1, 0)
        hi = int(np.searchsorted(ti, t_j - TIME_EPS, side="left"))
        t = ti[lo:hi].copy()
        if t.size == 0:
            return None
        t[0] = max(t[0], t_i)
        return t, ai[lo:hi], gi[lo:hi]

    def _prune_imu(self) -> None:
        if not self._imu_t or self.timeline is None:
            return
        keep_from = self.timeline.oldest_time - 1.0
        k = int(np.searchsorted(np.asarray(self._imu_t), keep_from))
        if k > 1000:
            del self._imu_t[:k], self._imu_a[:k], self._imu_g[:k]
            self._imu_arr = None

    def _imu_fit(self, t: float):
        """Local linear fit of the IMU around ``t``: specific force and rate at ``t``, rate slope."""
        key = round(t, 9)
        hit = self._fits.get(key)
        if hit is not None:
            return hit
        ti, ai, gi = self._imu_arrays()
        h = self.config.input_window
        lo = int(np.searchsorted(ti, t - h - TIME_EPS))
        hi = int(np.searchsorted(ti, t + h + TIME_EPS, side="right"))
        if hi - lo < 1:
            return None
        dt = ti[lo:hi] - t
        if dt.size >= 2:
            X = np.stack([np.ones_like(dt), dt], axis=-1)
            cf = np.linalg.lstsq(X, np.concatenate([ai[lo:hi], gi[lo:hi]], axis=-1), rcond=None)[0]
            fit = (cf[0, :3], cf[0, 3:], cf[1, 3:])
        else:
            fit = (ai[lo], gi[lo], np.zeros(3))
        if ti[-1] >= t + h:
            # the window is complete; later samples cannot change the fit
            self._fits[key] = fit
        return fit

    def _input_at(self, s: NavState) -> np.ndarray:
        """Body acceleration input ``[nu_dot, omega_dot]`` from IMU around the state time."""
        if not self.config.use_imu or not self._imu_t:
            return np.zeros(6)
        fit = self._imu_fit(s.timestamp)
        if fit is None:
            return s.accel_input.copy()
        f0, g0, g1 = fit
        omega = g0 - s.bias_gyro
        nu = s.velocity[:3]
        grav = s.rotation.T @ geodesy.gravity_ecef(s.position)
        return np.concatenate([f0 - s.bias_acc + grav - np.cross(omega, nu), g1])

    # -- timeline extension ----------------------------------------------------

    def _require_init(self):
        if self.timeline is None:
            raise NotInitialized("smoother has no initial state")

    def _preintegrate(self, s_i: NavState, t_j: float):
        sl = self._imu_slice(s_i.timestamp, t_j)
        if sl is None:
            return None
        pre = imu_f.preintegrate(sl, s_i.bias_acc, s_i.bias_gyro, geodesy.gravity_ecef(s_i.position), t_end=t_j,
                                 noise=self.config.imu_noise)
        # gravity at the midpoint of the predicted segment
        T_j, _ = imu_f.predict(s_i.pose, s_i.velocity[:3], pre)
        pre.gravity = geodesy.gravity_ecef(0.5 * (s_i.position + T_j[:3, 3]))
        return pre

    def extend_timeline(self, n: int = 1) -> list[tuple[int, float]]:
        """Append ``n`` states with motion factors and IMU-propagated initial values."""
        self._require_init()
        new = self.timeline.extend(n)
        for sid, t in new:
            prev = self.states[sid - 1]
            dt = t - prev.timestamp
            pair = _Pair()
            s = prev.copy()
            s.timestamp = t
            pre = self._preintegrate(prev, t) if self.config.use_imu else None
            if pre is not None:
                pair.pre = pre
                T_j, nu_j = imu_f.predict(prev.pose, prev.velocity[:3], pre)
                s.pose = T_j
                s.velocity = np.concatenate([nu_j, self.gyro_at(t)[0] - prev.bias_gyro])
            else:
                if self.config.use_imu:
                    raise NotInitialized(f"no IMU samples cover [{prev.timestamp:.3f}, {t:.3f}]")
                s.pose = prev.pose @ lie.exp_se3(prev.velocity * dt)
            s.clock = np.array([prev.clock[0] + prev.clock[1] * dt, prev.clock[1]]) if self.config.tight else np.zeros(2)
            s.accel_input = self._input_at(s)
            self.states[sid] = s
            self.pairs[sid - 1] = pair
        self._reroute_cache()
        return new

    def advance(self, t_now: float) -> int:
        """Extend the timeline with every grid state at or before ``t_now`` that the IMU covers."""
        self._require_init()
        horizon = min(t_now, self.imu_end) if self.config.use_imu else t_now
        n = self.timeline.ids_until(horizon + TIME_EPS)
        if n:
            self.extend_timeline(n)
        return n

    # -- measurements -----------------------------------------------------------

    def _times_of(self, sensor: str, m) -> tuple:
        if sensor == "odometry":
            return (m.t_i, m.t_j)
        return (m.t,)

    def _key(self, sensor: str, m) -> tuple:
        d = self.config.solver.delay(sensor)
        return (SENSOR_ORDER[sensor],) + tuple(round(t - d, 9) for t in self._times_of(sensor, m))

    def route(self, t_stamped: float, sensor: str) -> RoutingDecision:
        self._require_init()
        sv = self.config.solver
        return self.timeline.route(t_stamped, sv.delay(sensor), sv.t_sync)

    def _enabled(self, sensor: str) -> bool:
        c = self.config
        return {"gnss": c.use_gnss and c.tight, "pvt": c.use_pvt and not c.tight,
                "odometry": c.use_odometry, "speed": c.use_speed}[sensor]

    def add_measurement(self, sensor: str, m) -> RoutingKind | None:
        """Route one measurement; returns its routing kind (``None`` if the sensor is unused)."""
        if sensor not in SENSOR_ORDER:
            raise ValueError(f"unknown sensor {sensor!r}")
        if not self._enabled(sensor):
            return None
        if sensor == "gnss":
            order = np.argsort(m.sat_ids, kind="stable")
            if np.any(order != np.arange(len(order))):
                m = GnssEpoch(m.t, m.sat_ids[order], m.sat_pos[order], m.sat_vel[order], m.pseudorange[order],
                              m.doppler_hz[order], m.cn0_dbhz[order], m.elevation[order], m.wavelength)
        if self.timeline is None:
            return self._cache(sensor, m)
        decisions = [self.route(t, sensor) for t in self._times_of(sensor, m)]
        kinds = {d.kind for d in decisions}
        if RoutingKind.DROPPED in kinds:
            self.counts[RoutingKind.DROPPED] += 1
            return RoutingKind.DROPPED
        if RoutingKind.CACHED in kinds:
            return self._cache(sensor, m)
        slots = tuple((d.anchor_ids[0], None) if d.kind is RoutingKind.SYNCHRONIZED else (d.anchor_ids[0], round(d.tau, 12))
                      for d in decisions)
        kind = RoutingKind.INTERPOLATED if any(d.kind is RoutingKind.INTERPOLATED for d in decisions) else RoutingKind.SYNCHRONIZED
        key = self._key(sensor, m)
        self.records[key] = _Record(key, sensor, slots, m)
        self.counts[kind] += 1
        return kind

    def _cache(self, sensor: str, m) -> RoutingKind:
        q = self.cache.setdefault(sensor, deque())
        q.append(m)
        self.counts[RoutingKind.CACHED] += 1
        t_last = max(self._times_of(sensor, m))
        while q and t_last - min(self._times_of(sensor, q[0])) > self.config.cache_seconds:
            q.popleft()
            self.evicted += 1
            log.warning("%s cache exceeded %.1f s; evicted oldest measurement", sensor, self.config.cache_seconds)
        return RoutingKind.CACHED

    def _reroute_cache(self) -> None:
        pending = []
        for sensor in sorted(self.cache, key=SENSOR_ORDER.get):
            q = self.cache[sensor]
            pending.extend((sensor, m) for m in q)
            q.clear()
        pending.sort(key=lambda sm: self._key(*sm))
        for sensor, m in pending:
            self.counts[RoutingKind.CACHED] -= 1
            self.add_measurement(sensor, m)

    @property
    def cache_size(self) -> int:
        return sum(len(q) for q in self.cache.values())

    # -- optimization -------------------------------------------------------------

    def window_ids(self) -> list[int]:
        self._require_init()
        return self.timeline.ids

    def _relinearize_imu(self, ids: list[int]) -> None:
        if not self.config.use_imu:
            return
        for sid in ids[:-1]:
            pair = self.pairs.get(sid)
            if pair is None or pair.pre is None:
                continue
            s = self.states[sid]
            db = max(np.linalg.norm(s.bias_acc - pair.pre.bias_acc), np.linalg.norm(s.bias_gyro - pair.pre.bias_gyro))
            if db > imu_f.BIAS_RELINEARIZE:
                pair.pre = self._preintegrate(s, self.states[sid + 1].timestamp)

    def _problem(self, ids, records=None, pair_mask=None, priors=None) -> _Problem:
        if records is None:
            records = [self.records[k] for k in sorted(self.records)]
        if pair_mask is None:
            pair_mask = np.ones(max(len(ids) - 1, 0), dtype=bool)
        return _Problem(self, ids, records, pair_mask, self.priors if priors is None else priors)

    def _full_mask(self, n: int) -> np.ndarray:
        return np.tile(self.mask, n)

    def cost(self) -> float:
        ids = self.window_ids()
        prob = self._problem(ids)
        return prob.evaluate([self.states[i] for i in ids], jac=False)[0]

    def optimize(self) -> OptimizationReport:
        """Levenberg-Marquardt over the window; states are updated in place."""
        self._require_init()
        t_start = time.perf_counter()
        sv = self.config.solver
        ids = self.window_ids()
        for sid in ids:
            self.states[sid].accel_input = self._input_at(self.states[sid])
        self._relinearize_imu(ids)
        prob = self._problem(ids)
        states = [self.states[i] for i in ids]
        act = self._full_mask(len(ids))
        cost, acc = prob.evaluate(states)
        H, g, u = _masked_system(acc, act)
        rep = OptimizationReport(initial_cost=cost, n_states=len(ids))
        lam = sv.damping_init
        for it in range(sv.max_iterations):
            ab0 = _upper_bands(H, u)
            diag = ab0[u].copy()
            accepted = final = False
            first_gain = None
            for _ in range(sv.max_damping_retries + 1):
                ab = ab0.copy()
                ab[u] += lam * np.maximum(diag, 1e-9)
                try:
                    cf = scipy.linalg.cholesky_banded(ab, check_finite=False)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                d = cf[u][act]
                if (d.max() / d.min()) ** 2 > sv.condition_limit:
                    rep.ill_conditioned = True
                da = -scipy.linalg.cho_solve_banded((cf, False), g, check_finite=False)
                predicted = -(2.0 * g @ da + da @ H @ da)
                first_gain = predicted if first_gain is None else first_gain
                if predicted <= 1e-3 * sv.convergence_tol * cost:
                    rep.converged = True
                    break
                cand = _retract_all(states, da)
                c_new, _ = prob.evaluate(cand, jac=False)
                if np.isfinite(c_new) and c_new < cost:
                    accepted = True
                    drop = cost - c_new
                    states, cost = cand, c_new
                    lam = max(lam / 10.0, 1e-15)
                    tol = max(sv.convergence_tol * cost, sv.absolute_tol)
                    # a quadratic model that matched the drop leaves about |predicted - drop| to gain
                    small = drop < tol or abs(predicted - drop) < tol
                    if small or np.max(np.abs(da)) < sv.step_tol or it + 1 == sv.max_iterations:
                        rep.converged = small
                        final = True
                    else:
                        _, acc_new = prob.evaluate(cand)
                        H, g, u = _masked_system(acc_new, act)
                    break
                if predicted <= _rounding_floor(cost):
                    # the step is lost in rounding noise; nothing left to gain
                    rep.converged = True
                    break
                lam *= 10.0
            rep.iterations = it + 1
            if rep.converged or final:
                break
            if not accepted:
                # an undamped gain this small is below the cost's rounding floor
                if it == 0 and first_gain is not None and first_gain > NOISE_GAIN * cost + _rounding_floor(cost):
                    raise SolverDiverged("cost increased for every damping retry")
                rep.converged = True
                break
        for sid, s in zip(ids, states):
            s.accel_input = self.states[sid].accel_input
            self.states[sid] = s
        self._last_lin = (ids, prob, states, act)
        rep.final_cost = cost
        rep.seconds = time.perf_counter() - t_start
        self.reports.append(rep)
        return rep

    def marginal_covariance(self, state_id: int) -> np.ndarray:
        """20x20 marginal covariance of a window state from the last linearization (inactive dims zero)."""
        if self._last_lin is None:
            raise NotInitialized("optimize() has not run yet")
        ids, prob, states, act = self._last_lin
        H, _, _ = _masked_system(prob.evaluate(states)[1], act)
        p = ids.index(state_id)
        act = self._full_mask(len(ids))
        Ha = H[np.ix_(act, act)]
        cols = np.flatnonzero(act)
        sel = np.flatnonzero((cols >= p * STATE_DIM) & (cols < (p + 1) * STATE_DIM))
        E = np.zeros((cols.size, sel.size))
        E[sel, np.arange(sel.size)] = 1.0
        cf = scipy.linalg.cho_factor(Ha, check_finite=False)
        X = scipy.linalg.cho_solve(cf, E, check_finite=False)[sel]
        out = np.zeros((STATE_DIM, STATE_DIM))
        m = np.flatnonzero(self.mask)
        out[np.ix_(m, m)] = X
        return out

    # -- marginalization ------------------------------------------------------

    def pending_removal(self, horizon: float | None = None) -> list[int]:
        """Ids that :meth:`marginalize` would remove for ``horizon`` (default newest - lag)."""
        tl = self.timeline
        if horizon is None:
            horizon = tl.newest_time - self.config.solver.lag_seconds
        return [sid for sid in tl.ids[:-1] if tl.time_of(sid) < horizon - TIME_EPS]

    def interpolate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """GP-interpolated pose and body velocity at ``t`` from the current window."""
        self._require_init()
        tl = self.timeline
        if not tl.oldest_time - TIME_EPS <= t <= tl.newest_time + TIME_EPS:
            raise gp.QueryOutOfSegment(f"t={t:.3f} outside the window [{tl.oldest_time:.3f}, {tl.newest_time:.3f}]")
        k = min(int(np.floor((t - tl.t0) / tl.spacing + TIME_EPS)), tl.newest_id)
        a = self.states[k]
        if k == tl.newest_id:
            return a.pose.copy(), a.velocity.copy()
        b = self.states[k + 1]
        T, w, _ = gp.query(a.pose, a.velocity, a.accel_input, b.pose, b.velocity, b.accel_input,
                           b.timestamp - a.timestamp, t - a.timestamp, self.config.gp_model,
                           self.config.jacobian_mode, jacobians=False)
        return T, w

    def marginalize(self, horizon: float | None = None) -> list[int]:
        """Fold states older than ``horizon`` (default newest - lag) into a boundary prior."""
        self._require_init()
        tl = self.timeline
        if horizon is None:
            horizon = tl.newest_time - self.config.solver.lag_seconds
        ids = tl.ids
        removed = self.pending_removal(horizon)
        if not removed:
            return []
        cut = removed[-1]
        touching = lambda rec: any(k[0] <= cut for k in rec.slots)
        recs = [self.records[k] for k in sorted(self.records) if touching(self.records[k])]
        old_priors = [p for p in self.priors if min(p.state_ids) <= cut]
        keep_priors = [p for p in self.priors if min(p.state_ids) > cut]
        # only the states reached by the folded factors take part
        reach = max([cut + 1] + [k[0] + (k[1] is not None) for r in recs for k in r.slots]
                    + [max(p.state_ids) for p in old_priors])
        ids = [sid for sid in ids if sid <= reach]
        pair_mask = np.array([sid <= cut for sid in ids[:-1]], dtype=bool)
        prob = _Problem(self, ids, recs, pair_mask, old_priors)
        states = [self.states[i] for i in ids]
        _, acc = prob.evaluate(states)
        H, g = acc.dense()
        n_m = len(removed) * STATE_DIM
        act = self._full_mask(len(ids))
        m_idx = np.flatnonzero(act[:n_m])
        k_idx = n_m + np.flatnonzero(act[n_m:])
        Hmm = H[np.ix_(m_idx, m_idx)]
        Hkm = H[np.ix_(k_idx, m_idx)]
        Hkk = H[np.ix_(k_idx, k_idx)]
        cf = scipy.linalg.cho_factor(Hmm + 1e-12 * np.eye(m_idx.size) * np.max(np.diag(Hmm)), check_finite=False)
        X = scipy.linalg.cho_solve(cf, np.concatenate([Hkm.T, g[m_idx, None]], axis=1), check_finite=False)
        Hs = Hkk - Hkm @ X[:, :-1]
        gs = g[k_idx] - Hkm @ X[:, -1]
        Hs = 0.5 * (Hs + Hs.T)
        # keep only kept states that the folded factors actually touch
        k_state = (k_idx - n_m) // STATE_DIM
        touched = sorted({int(ks) for ks, row in zip(k_state, np.abs(Hs).max(axis=1)) if row > 0.0})
        sel = np.isin(k_state, touched)
        Hs, gs, k_sub = Hs[np.ix_(sel, sel)], gs[sel], k_idx[sel]
        lam, V = np.linalg.eigh(Hs)
        good = lam > EIG_FLOOR * max(lam.max(), 1e-300)
        sq = np.sqrt(lam[good])
        A_act = sq[:, None] * V[:, good].T
        b = (V[:, good].T @ gs) / sq
        # expand to full 20-dim blocks of the touched states
        base = (n_m // STATE_DIM + np.array(touched)) * STATE_DIM
        cols = {c: i for i, c in enumerate(k_sub)}
        A = np.zeros((A_act.shape[0], len(touched) * STATE_DIM))
        for a, b0 in enumerate(base):
            for d in range(STATE_DIM):
                c = b0 + d
                if c in cols:
                    A[:, a * STATE_DIM + d] = A_act[:, cols[c]]
        new_ids = [ids[len(removed) + t] for t in touched]
        new_prior = LinearPrior(new_ids, [self.states[i].copy() for i in new_ids], A, b)
        self.priors = keep_priors + [new_prior]
        for key in [k for k in self.records if touching(self.records[k])]:
            del self.records[key]
        for sid in removed:
            self.history.append(self.states.pop(sid))
            self.pairs.pop(sid, None)
        tl.retire_before(horizon)
        self._fits = {k: v for k, v in self._fits.items() if k >= tl.oldest_time - TIME_EPS}
        self._prune_imu()
        return removed

    def update(self, t_now: float) -> OptimizationReport | None:
        """Extend to ``t_now``, optimize and marginalize (one tick of the online loop)."""
        self.advance(t_now)
        if len(self.timeline) < 2 and not self.records:
            return None
        rep = self.optimize()
        self.marginalize()
        return rep

    def finalize(self) -> list[NavState]:
        """Smoothed trajectory: marginalized states followed by the current window."""
        out = [s.copy() for s in self.history]
        if self.timeline is not None:
            out.extend(self.states[i].copy() for i in self.timeline.ids)
        return out

    def newest_state(self) -> NavState:
        return self.states[self.timeline.newest_id].copy()

    def audit(self) -> list[str]:
        """Structural problems of the graph (empty when consistent)."""
        problems = []
        ids = set(self.timeline.ids)
        for rec in self.records.values():
            for a, tau in rec.slots:
                need = {a} if tau is None else {a, a + 1}
                if not need <= ids:
                    problems.append(f"{rec.sensor} factor at {rec.key} references a missing state")
        for sid in self.timeline.ids[:-1]:
            if sid not in self.pairs:
                problems.append(f"pair ({sid}, {sid + 1}) has no motion factors")
            elif self.config.use_imu and self.pairs[sid].pre is None:
                problems.append(f"pair ({sid}, {sid + 1}) has no IMU factor")
        extra = set(self.pairs) - set(self.timeline.ids[:-1])
        if extra:
            problems.append(f"motion factors on retired pairs {sorted(extra)}")
        return problems

    def routing_counts(self) -> dict:
        return {k.value: int(v) for k, v in self.counts.items()}
