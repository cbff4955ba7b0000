"""Cell likelihoods under the Poisson birth / clutter model.

For a cell ``C`` with measurements ``Z_C`` and a fixed sensor trajectory,

* ``detect_term = log <prod_k l_k ; lambda>`` integrates the per-step
  likelihoods (detections and misdetections) against the undetected-landmark
  intensity,
* a singleton may also be clutter, so ``log_l = logaddexp(log c, detect_term)``,
* a cell of several measurements must be a landmark, so ``log_l = detect_term``.

The integral is approximated by a linearised Gaussian filter started from a
broad Gaussian at the back-projection of the earliest measurement; see
:func:`pmbm_slam._kernels.cell_filter`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _kernels as kern
from ..models import MeasurementBatch, ScenarioConfig, as_trajectory
from ..rfs import GaussianDensity
from .partition import Cell, Partition, iter_bits

MISS_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class CellLikelihood:
    log_l: float
    detect_term: float
    birth: GaussianDensity | None
    is_singleton: bool

    @property
    def feasible(self) -> bool:
        return self.birth is not None


class CellScorer:
    """Cached cell likelihoods for one batch and one fixed trajectory.

    Cells are addressed by integer bitmasks over the batch's measurement ids,
    which keeps cache keys cheap to hash in the sampler's inner loops.
    """

    def __init__(self, batch: MeasurementBatch, traj, cfg: ScenarioConfig, traj_cov=None):
        self.batch = batch
        self.cfg = cfg
        self.traj = np.ascontiguousarray(as_trajectory(traj), dtype=float)
        if self.traj.shape[0] < batch.K + 1:
            raise ValueError("trajectory shorter than the measurement batch")
        if traj_cov is None:
            self.traj_cov = np.zeros((0, 5, 5))
        else:
            self.traj_cov = np.ascontiguousarray(traj_cov, dtype=float)
            if self.traj_cov.shape != (self.traj.shape[0], 5, 5):
                raise ValueError("traj_cov must hold one 5x5 block per trajectory state")
        self.Z = np.ascontiguousarray(batch.z)
        self.steps = batch.steps
        self.n = len(batch)
        self.log_c = cfg.log_clutter_density
        self.log_pd = math.log(cfg.pd)
        self.log_miss = math.log(max(1.0 - cfg.pd, MISS_FLOOR))
        self.log_rate = math.log(cfg.lambda_rate) if cfg.lambda_rate > 0 else -math.inf
        self._bs = np.asarray(cfg.bs_position, dtype=float)
        self._R = np.ascontiguousarray(cfg.R)
        self._C0 = np.ascontiguousarray(cfg.birth_cov)
        self._lo = np.asarray(cfg.env_box.lo, dtype=float)
        self._hi = np.asarray(cfg.env_box.hi, dtype=float)
        # id range of every scan, ids are sorted by (k, alpha)
        self.scan_lo = np.searchsorted(self.steps, np.arange(batch.K + 2)).tolist()
        self.back_projection = np.empty((self.n, 3))
        for i in range(self.n):
            x, _, _ = kern.back_project(self.Z[i], self.traj[self.steps[i]], self._bs)
            self.back_projection[i] = x
        self._step_bit = [1 << int(k) for k in self.steps]
        self._log_l: dict[int, float] = {0: 0.0}
        self._full: dict[int, tuple] = {}
        self._stepmask: dict[int, int] = {0: 0}

    # -- fast accessors used by the sampler ---------------------------------
    def log_l(self, mask: int) -> float:
        v = self._log_l.get(mask)
        if v is None:
            self._evaluate(mask)
            v = self._log_l[mask]
        return v

    def entry(self, mask: int) -> tuple:
        """``(log_l, detect_term, mean, cov, feasible)`` of a non-empty cell."""
        e = self._full.get(mask)
        if e is None:
            self._evaluate(mask)
            e = self._full[mask]
        return e

    def birth_mean(self, mask: int) -> np.ndarray:
        return self.entry(mask)[2]

    def stepmask(self, mask: int) -> int:
        v = self._stepmask.get(mask)
        if v is None:
            v = 0
            for i in iter_bits(mask):
                v |= self._step_bit[i]
            self._stepmask[mask] = v
        return v

    def index_at_step(self, mask: int, k: int) -> int:
        """Id of the cell's measurement from scan ``k`` or -1."""
        lo, hi = self.scan_lo[k], self.scan_lo[k + 1]
        part = (mask >> lo) & ((1 << (hi - lo)) - 1)
        return lo + part.bit_length() - 1 if part else -1

    def _evaluate(self, mask: int):
        ids = list(iter_bits(mask))
        dt, mean, cov, feasible = kern.cell_filter(
            self.Z[ids], self.steps[ids], self.traj, self.traj_cov, self._bs, self._R, self._C0,
            self.log_pd, self.log_miss, self.cfg.fov_radius, self.log_rate, self._lo, self._hi,
        )
        if len(ids) == 1:
            ll = float(np.logaddexp(self.log_c, dt))
        else:
            ll = float(dt)
        self._log_l[mask] = ll
        self._full[mask] = (ll, float(dt), mean, cov, bool(feasible))

    # -- public, typed views ------------------------------------------------
    def mask_of(self, cell: Cell) -> int:
        mask = 0
        for m in cell.indices:
            mask |= 1 << self.batch.id_of(m)
        return mask

    def cell_likelihood(self, cell: Cell) -> CellLikelihood:
        ll, dt, mean, cov, feasible = self.entry(self.mask_of(cell))
        birth = GaussianDensity(mean.copy(), cov.copy()) if feasible else None
        return CellLikelihood(ll, dt, birth, len(cell) == 1)

    def partition_log_weight(self, p: Partition) -> float:
        return sum(self.log_l(self.mask_of(c)) for c in p.cells)


def cell_log_likelihood(cell: Cell, traj, cfg: ScenarioConfig, batch: MeasurementBatch,
                        traj_cov=None) -> CellLikelihood:
    return CellScorer(batch, traj, cfg, traj_cov).cell_likelihood(cell)


def partition_log_weight(p: Partition, traj, cfg: ScenarioConfig, batch: MeasurementBatch,
                         scorer: CellScorer | None = None) -> float:
    """Unnormalised log weight: the sum of the cells' log likelihoods."""
    scorer = scorer or CellScorer(batch, traj, cfg)
    return scorer.partition_log_weight(p)


def existence_probability(detect_term: float, log_c: float) -> float:
    """``exp(dt) / (c + exp(dt))`` evaluated in the log domain."""
    if detect_term == -math.inf:
        return 0.0
    if log_c == -math.inf:
        return 1.0
    return float(np.exp(detect_term - np.logaddexp(log_c, detect_term)))
