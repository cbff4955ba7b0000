"""Evaluation metrics against ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association.partition import Partition
from .models import wrap_angle


@dataclass(frozen=True)
class GospaBreakdown:
    total: float
    localization: float
    missed: float
    false_alarm: float
    assignment: tuple[tuple[int, int], ...]
    n_missed: int = 0
    n_false: int = 0


def gospa(truth, est, c: float = 5.0, p: float = 2.0, alpha: float = 2.0) -> GospaBreakdown:
    """GOSPA with the ``alpha = 2`` decomposition.

    The assignment minimises the sum of ``min(d, c)^p`` over pairs, which is
    solved exactly as a rectangular linear assignment. Pairs at distance
    ``>= c`` are not counted as matched; their truth element is missed and
    their estimate a false alarm, each costing ``c^p / alpha``. The
    component fields hold the ``1/p``-th roots of their sums, so that
    ``total^p`` is the sum of the three components' ``p``-th powers.
    """
    if c <= 0 or p < 1:
        raise ValueError("need c > 0 and p >= 1")
    if alpha != 2:
        raise ValueError("only the alpha = 2 decomposition is supported")
    X = np.asarray(truth, dtype=float).reshape(-1, 3) if len(truth) else np.zeros((0, 3))
    Y = np.asarray(est, dtype=float).reshape(-1, 3) if len(est) else np.zeros((0, 3))
    nx, ny = len(X), len(Y)
    pairs: list[tuple[int, int]] = []
    loc = 0.0
    if nx and ny:
        d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
        cost = np.minimum(d, c) ** p
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if d[i, j] < c:
                pairs.append((int(i), int(j)))
                loc += d[i, j] ** p
    n_missed = nx - len(pairs)
    n_false = ny - len(pairs)
    missed = c**p / alpha * n_missed
    false = c**p / alpha * n_false
    total = (loc + missed + false) ** (1.0 / p)
    return GospaBreakdown(
        float(total), float(loc ** (1.0 / p)), float(missed ** (1.0 / p)), float(false ** (1.0 / p)),
        tuple(pairs), n_missed, n_false,
    )


@dataclass(frozen=True, eq=False)
class PartitionAgreement:
    nmi: float
    contingency: np.ndarray


def _entropy(counts: np.ndarray, n: int) -> float:
    q = counts[counts > 0] / n
    return float(-(q * np.log(q)).sum())


def partition_agreement(a: Partition, b: Partition) -> PartitionAgreement:
    if a.index_set != b.index_set:
        raise ValueError("partitions cover different index sets")
    ca, cb = a.ordered_cells(), b.ordered_cells()
    where = {}
    for j, cell in enumerate(cb):
        for m in cell.indices:
            where[m] = j
    table = np.zeros((len(ca), len(cb)), dtype=np.int64)
    for i, cell in enumerate(ca):
        for m in cell.indices:
            table[i, where[m]] += 1
    n = int(table.sum())
    if n == 0:
        return PartitionAgreement(1.0, table)
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 and hb == 0.0:
        return PartitionAgreement(1.0, table)
    nz = table > 0
    pij = table[nz] / n
    pi = (table.sum(axis=1) / n)[:, None].repeat(table.shape[1], axis=1)[nz]
    pj = (table.sum(axis=0) / n)[None, :].repeat(table.shape[0], axis=0)[nz]
    mi = float((pij * np.log(pij / (pi * pj))).sum())
    value = 2.0 * mi / (ha + hb)
    return PartitionAgreement(float(min(1.0, max(0.0, value))), table)


def nmi(a: Partition, b: Partition) -> float:
    """Normalised mutual information ``2 I(A;B) / (H(A) + H(B))``."""
    return partition_agreement(a, b).nmi


@dataclass(frozen=True, eq=False)
class RmseResult:
    per_step: np.ndarray
    aggregate: float


def rmse(truths, estimates, selector=slice(0, 3), angular: bool = False) -> RmseResult:
    """RMSE over Monte-Carlo runs per time step, and over all steps.

    ``truths`` and ``estimates`` are sequences of ``(K+1, 5)`` trajectories
    (or a stacked ``(runs, K+1, 5)`` array). ``selector`` picks the state
    components; the error at each step is the Euclidean norm over them.
    Angular components are wrapped before squaring.
    """
    T = np.asarray(truths, dtype=float)
    E = np.asarray(estimates, dtype=float)
    if T.shape != E.shape:
        raise ValueError("truth and estimate arrays differ in shape")
    if T.ndim == 2:
        T, E = T[None], E[None]
    err = E[..., selector] - T[..., selector]
    if angular:
        err = wrap_angle(err)
    err = np.atleast_1d(err)
    sq = err**2 if err.ndim == 2 else (err**2).sum(axis=-1)
    per_step = np.sqrt(sq.mean(axis=0))
    return RmseResult(per_step, float(np.sqrt(sq.mean())))


def position_rmse(truths, estimates) -> RmseResult:
    return rmse(truths, estimates, slice(0, 3))


def heading_rmse(truths, estimates) -> RmseResult:
    return rmse(truths, estimates, 3, angular=True)


def bias_rmse(truths, estimates) -> RmseResult:
    return rmse(truths, estimates, 4)
