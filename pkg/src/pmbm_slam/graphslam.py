"""Conditional MAP estimation of the trajectory and the existing landmarks
given a sampled association and existence flags.

Joint state layout: ``q = [s_0, ..., s_K, x^1, ..., x^kappa]`` with five
entries per sensor state and three per landmark. The cost sums four kinds
of weighted squared residuals: the initial-state prior, the motion model,
each landmark's broad birth prior and every kept measurement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .association.partition import Cell, ExistenceVector, Partition
from .graph import (
    InformationSystem,
    LevenbergOptions,
    OptimizeResult,
    assemble,
    block_triplets,
    covariance,
    optimize,
)
from .models import (
    HEADING,
    LANDMARK_DIM,
    STATE_DIM,
    InfeasibleMeasurement,
    MeasurementBatch,
    MeasurementIndex,
    ScenarioConfig,
    dead_reckon,
    inverse_measurement,
    wrap_angle,
)
from .rfs import BernoulliComponent, GaussianDensity, MultiBernoulli

log = logging.getLogger(__name__)

NU = STATE_DIM
MU = LANDMARK_DIM


def _inv_psd(m: np.ndarray, floor_rel: float = 1e-6) -> np.ndarray:
    """Inverse of a PSD matrix whose zero-variance directions are floored
    at ``floor_rel`` times its largest eigenvalue."""
    w, V = np.linalg.eigh(0.5 * (m + m.T))
    top = max(float(w.max(initial=0.0)), 1e-300)
    w = np.maximum(w, floor_rel * top)
    return (V / w) @ V.T


@dataclass(eq=False)
class GraphProblem:
    cfg: ScenarioConfig
    K: int
    kept_cells: list[Cell]
    landmark_priors: list[GaussianDensity]
    z: np.ndarray  # (M, 5) kept measurements
    k_of: np.ndarray  # (M,) step of each measurement
    lm_of: np.ndarray  # (M,) landmark row of each measurement
    dropped: list[tuple[Cell, str]] = field(default_factory=list)

    def __post_init__(self):
        cfg = self.cfg
        self.kappa = len(self.kept_cells)
        self.dim = NU * (self.K + 1) + MU * self.kappa
        self.W_R = _inv_psd(cfg.R)
        self.W_Q = np.linalg.inv(cfg.graph_Q)
        self.W_0 = _inv_psd(cfg.s0_prior.cov)
        self.prior_means = np.array([g.mean for g in self.landmark_priors]).reshape(-1, 3)
        self.W_L = np.array([_inv_psd(g.cov) for g in self.landmark_priors]).reshape(-1, 3, 3)
        self._bs = np.asarray(cfg.bs_position, dtype=float)
        self._heading = np.arange(self.K + 1) * NU + HEADING
        self._z = np.ascontiguousarray(self.z, dtype=float)
        self._k = np.ascontiguousarray(self.k_of, dtype=np.int64)
        self._lm = np.ascontiguousarray(self.lm_of, dtype=np.int64)

    # -- layout ------------------------------------------------------------------
    def split(self, q) -> tuple[np.ndarray, np.ndarray]:
        n = NU * (self.K + 1)
        return q[:n].reshape(self.K + 1, NU), q[n:].reshape(self.kappa, MU)

    def join(self, traj, lms) -> np.ndarray:
        return np.concatenate([np.asarray(traj, dtype=float).reshape(-1), np.asarray(lms, dtype=float).reshape(-1)])

    def state_index(self, k: int) -> np.ndarray:
        return np.arange(NU * k, NU * (k + 1))

    def landmark_index(self, i: int) -> np.ndarray:
        base = NU * (self.K + 1)
        return np.arange(base + MU * i, base + MU * (i + 1))

    # -- residuals -----------------------------------------------------------------
    def _residuals(self, q):
        traj, lms = self.split(q)
        traj = np.ascontiguousarray(traj)
        lms = np.ascontiguousarray(lms)
        e0 = traj[0] - self.cfg.s0_prior.mean
        e0[HEADING] = wrap_angle(e0[HEADING])
        em, F = kern.motion_factors(traj, self.cfg.speed, self.cfg.turn_rate)
        el = lms - self.prior_means
        ez, Hs, Hl, ok = kern.measurement_factors(self._z, self._k, self._lm, traj, lms, self._bs)
        return e0, em, F, el, ez, Hs, Hl, ok

    def cost(self, q) -> float:
        e0, em, _, el, ez, _, _, ok = self._residuals(q)
        if not ok:
            return float("inf")
        c = float(e0 @ self.W_0 @ e0)
        c += float(np.einsum("ki,ij,kj->", em, self.W_Q, em))
        c += float(np.einsum("ki,kij,kj->", el, self.W_L, el))
        c += float(np.einsum("ki,ij,kj->", ez, self.W_R, ez))
        return c

    def linearize(self, q) -> InformationSystem:
        e0, em, F, el, ez, Hs, Hl, ok = self._residuals(q)
        if not ok:
            raise InfeasibleMeasurement("degenerate measurement geometry at the linearisation point")
        K = self.K
        rows, cols, vals = [], [], []
        b = np.zeros(self.dim)

        def put(ia, ib, blocks):
            r, c, v = block_triplets(ia, ib, blocks)
            rows.append(r)
            cols.append(c)
            vals.append(v)

        # initial-state prior
        i0 = self.state_index(0)[None, :]
        put(i0, i0, self.W_0[None])
        b[i0[0]] += self.W_0 @ e0
        # motion: J = [-F_k, I] on (s_{k-1}, s_k)
        if K:
            prev = (np.arange(K)[:, None] * NU + np.arange(NU)[None, :])
            cur = prev + NU
            WQ = self.W_Q
            FtW = -np.einsum("kji,jl->kil", F, WQ)  # (-F)^T W
            put(prev, prev, FtW @ (-F))
            put(prev, cur, FtW)
            put(cur, prev, np.transpose(FtW, (0, 2, 1)))
            put(cur, cur, np.broadcast_to(WQ, (K, NU, NU)))
            np.add.at(b, prev, np.einsum("kij,kj->ki", FtW, em))
            np.add.at(b, cur, em @ WQ.T)
        # landmark priors
        if self.kappa:
            li = np.array([self.landmark_index(i) for i in range(self.kappa)])
            put(li, li, self.W_L)
            np.add.at(b, li, np.einsum("kij,kj->ki", self.W_L, el))
        # measurements: J = [H_S, H_L] on (s_k, x^i)
        if len(ez):
            si = self._k[:, None] * NU + np.arange(NU)[None, :]
            lj = NU * (K + 1) + self._lm[:, None] * MU + np.arange(MU)[None, :]
            WR = self.W_R
            HsW = np.einsum("kji,jl->kil", Hs, WR)
            HlW = np.einsum("kji,jl->kil", Hl, WR)
            put(si, si, HsW @ Hs)
            put(si, lj, HsW @ Hl)
            put(lj, si, HlW @ Hs)
            put(lj, lj, HlW @ Hl)
            np.add.at(b, si, np.einsum("kij,kj->ki", HsW, ez))
            np.add.at(b, lj, np.einsum("kij,kj->ki", HlW, ez))
        total = self.cost(q)
        return InformationSystem(assemble(self.dim, rows, cols, vals), b, total)

    def retract(self, q, dq):
        out = q + dq
        out[self._heading] = wrap_angle(out[self._heading])
        return out

    def initial_state(self, traj_init, landmark_init: dict[MeasurementIndex, np.ndarray] | None = None) -> np.ndarray:
        """Trajectory from ``traj_init``; landmarks from ``landmark_init``
        keyed by a cell's earliest index, falling back to the birth mean."""
        traj_init = np.asarray(traj_init, dtype=float)
        if traj_init.shape != (self.K + 1, NU):
            raise ValueError(f"trajectory has shape {traj_init.shape}, expected ({self.K + 1}, {NU})")
        landmark_init = landmark_init or {}
        lms = []
        for cell, prior in zip(self.kept_cells, self.landmark_priors):
            lms.append(landmark_init.get(cell.first, prior.mean))
        return self.join(traj_init, np.array(lms).reshape(-1, 3))


def build_graph(p: Partition, psi: ExistenceVector, traj_init, batch: MeasurementBatch,
                cfg: ScenarioConfig) -> GraphProblem:
    """Keep the cells flagged as existing and attach a birth prior to each.

    The birth mean is the back-projection of the cell's earliest measurement
    from ``traj_init``; a cell whose earliest measurement cannot be
    back-projected is dropped and recorded in ``GraphProblem.dropped``.
    """
    psi.check(p)
    traj_init = np.asarray(traj_init, dtype=float)
    K = batch.K
    kept: list[Cell] = []
    priors: list[GaussianDensity] = []
    dropped: list[tuple[Cell, str]] = []
    z, ks, lm = [], [], []
    for cell, flag in zip(p.ordered_cells(), psi):
        if not flag:
            continue
        first = cell.first
        try:
            prior = inverse_measurement(batch.measurement(first), traj_init[first.k], cfg)
        except InfeasibleMeasurement as exc:
            log.warning("dropping cell starting at %s: %s", first, exc)
            dropped.append((cell, str(exc)))
            continue
        row = len(kept)
        kept.append(cell)
        priors.append(prior)
        for m in cell:
            z.append(batch.measurement(m))
            ks.append(m.k)
            lm.append(row)
    return GraphProblem(
        cfg, K, kept, priors,
        np.array(z).reshape(-1, 5), np.array(ks, dtype=np.int64), np.array(lm, dtype=np.int64), dropped,
    )


@dataclass(eq=False)
class GraphSlamResult:
    traj_mean: np.ndarray  # (K+1, 5)
    traj_cov: np.ndarray  # (5(K+1), 5(K+1))
    map_mean: np.ndarray  # (kappa, 3)
    map_cov: np.ndarray  # (3 kappa, 3 kappa)
    landmarks: MultiBernoulli
    cell_first_indices: list[MeasurementIndex]
    converged: bool
    final_cost: float
    iterations: int
    cost_trace: list[float]
    omega: object = None

    @property
    def step_covariances(self) -> np.ndarray:
        """Marginal 5x5 covariance of every state, ``(K+1, 5, 5)``."""
        n = self.traj_mean.shape[0]
        idx = np.arange(n)
        blocks = self.traj_cov.reshape(n, NU, n, NU)[idx, :, idx, :]
        return blocks


def solve(prob: GraphProblem, q_init=None, options: LevenbergOptions = LevenbergOptions()) -> GraphSlamResult:
    """Optimise the problem and recover the covariance blocks."""
    if q_init is None:
        q_init = prob.initial_state(dead_reckon(prob.cfg, prob.K))
    res: OptimizeResult = optimize(prob, q_init, options)
    n_traj = NU * (prob.K + 1)
    traj_cov = covariance(res.omega, np.arange(n_traj))
    map_cov = covariance(res.omega, np.arange(n_traj, prob.dim))
    traj, lms = prob.split(res.q)
    comps = []
    for i in range(prob.kappa):
        blk = map_cov[MU * i: MU * (i + 1), MU * i: MU * (i + 1)]
        comps.append(BernoulliComponent(1.0, GaussianDensity(lms[i].copy(), blk.copy())))
    return GraphSlamResult(
        traj.copy(), traj_cov, lms.copy(), map_cov, MultiBernoulli(tuple(comps)),
        [c.first for c in prob.kept_cells], res.converged, res.cost, res.iterations, res.cost_trace, res.omega,
    )
