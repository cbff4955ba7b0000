"""Generic sparse least-squares machinery: damped Gauss-Newton steps in
information form, plus covariance recovery.

A problem is any object with

* ``dim``: length of the joint state vector,
* ``cost(q)``: the sum of weighted squared residuals ``sum e^T W e``,
* ``linearize(q)``: an :class:`InformationSystem` at ``q``,
* ``retract(q, dq)``: ``q + dq`` with any manifold fix-ups (angle wrapping).

With ``Omega = sum J^T W J`` and ``b = sum J^T W e`` the cost gradient is
``2 b`` and the Gauss-Newton increment is ``-Omega^{-1} b``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import block_diag


class SolverDegenerateError(RuntimeError):
    """The damped normal equations could not be factorised."""


@dataclass(frozen=True, eq=False)
class InformationSystem:
    omega: sp.csc_matrix
    b: np.ndarray
    e: float  # cost at the linearisation point


@dataclass(frozen=True)
class LevenbergOptions:
    max_iters: int = 50
    tau0: float = 1e-6
    tau_up: float = 10.0
    tau_down: float = 10.0
    tau_max: float = 1e12
    tau_min: float = 1e-12
    rel_cost_tol: float = 1e-8
    step_tol: float = 1e-9


@dataclass(eq=False)
class OptimizeResult:
    q: np.ndarray
    omega: sp.csc_matrix
    cost: float
    converged: bool
    iterations: int
    cost_trace: list[float] = field(default_factory=list)
    rejected_steps: int = 0


def assemble(dim: int, rows: list[np.ndarray], cols: list[np.ndarray], vals: list[np.ndarray]) -> sp.csc_matrix:
    """Sum COO triplets into a symmetric CSC matrix."""
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    m = sp.coo_matrix((v, (r, c)), shape=(dim, dim)).tocsc()
    m.sum_duplicates()
    return ((m + m.T) * 0.5).tocsc()


def block_triplets(idx_a: np.ndarray, idx_b: np.ndarray, blocks: np.ndarray):
    """COO triplets for a stack of dense blocks ``blocks[n]`` placed at rows
    ``idx_a[n]`` and columns ``idx_b[n]``."""
    n, p, q = blocks.shape
    rows = np.repeat(idx_a[:, :, None], q, axis=2).reshape(-1)
    cols = np.repeat(idx_b[:, None, :], p, axis=1).reshape(-1)
    return rows, cols, blocks.reshape(-1)


def _scaled_factor(omega: sp.csc_matrix, tau: float):
    d = omega.diagonal() + tau
    if np.any(~np.isfinite(d)) or np.any(d <= 0.0):
        raise SolverDegenerateError("non-positive diagonal in the damped information matrix")
    s = 1.0 / np.sqrt(d)
    S = sp.diags(s)
    A = (S @ (omega + tau * sp.identity(omega.shape[0], format="csc")) @ S).tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverDegenerateError(str(exc)) from exc
    return lu, s


def solve_increment(sys: InformationSystem, tau: float = 0.0) -> np.ndarray:
    """``dq = -(Omega + tau I)^{-1} b`` via a sparse factorisation of the
    Jacobi-scaled system."""
    lu, s = _scaled_factor(sys.omega, tau)
    dq = -s * lu.solve(s * sys.b)
    if not np.all(np.isfinite(dq)):
        raise SolverDegenerateError("increment is not finite")
    return dq


def covariance(omega: sp.csc_matrix, index: np.ndarray | None = None) -> np.ndarray:
    """Columns ``index`` of ``Omega^{-1}`` restricted to rows ``index``,
    from sparse solves against unit vectors."""
    n = omega.shape[0]
    index = np.arange(n) if index is None else np.asarray(index)
    if index.size == 0:
        return np.zeros((0, 0))
    lu, s = _scaled_factor(omega, 0.0)
    E = np.zeros((n, index.size))
    E[index, np.arange(index.size)] = s[index]
    X = (s[:, None] * lu.solve(E))[index]
    return 0.5 * (X + X.T)


def optimize(problem, q_init, options: LevenbergOptions = LevenbergOptions()) -> OptimizeResult:
    """Levenberg-damped Gauss-Newton.

    A step is kept only if it does not raise the cost; otherwise the damping
    grows by ``tau_up`` and the step is recomputed. Accepted steps shrink the
    damping by ``tau_down``. Iteration stops on a small relative cost change,
    a small increment, or ``max_iters``.
    """
    q = np.array(q_init, dtype=float)
    if q.shape != (problem.dim,):
        raise ValueError(f"initial state has shape {q.shape}, expected ({problem.dim},)")
    cost = problem.cost(q)
    if not math.isfinite(cost):
        raise SolverDegenerateError("cost is not finite at the initial state")
    trace = [cost]
    tau = options.tau0
    converged = False
    rejected = 0
    it = 0
    sys = None
    while it < options.max_iters:
        it += 1
        sys = problem.linearize(q)
        while True:
            try:
                dq = solve_increment(sys, tau)
            except SolverDegenerateError:
                tau *= options.tau_up
                if tau > options.tau_max:
                    raise
                continue
            q_new = problem.retract(q, dq)
            new_cost = problem.cost(q_new)
            if math.isfinite(new_cost) and new_cost <= cost:
                break
            rejected += 1
            tau *= options.tau_up
            if tau > options.tau_max:
                dq = None
                break
        if dq is None:
            converged = True  # no descent direction left at this damping
            break
        change = cost - new_cost
        q, cost = q_new, new_cost
        trace.append(cost)
        tau = max(tau / options.tau_down, options.tau_min)
        if change <= options.rel_cost_tol * max(cost, 1e-300) or np.max(np.abs(dq), initial=0.0) < options.step_tol:
            converged = True
            break
    omega = problem.linearize(q).omega
    return OptimizeResult(q, omega, cost, converged, it, trace, rejected)


class LinearProblem:
    """Linear-Gaussian least squares ``sum_i (A_i q - y_i)^T W_i (A_i q - y_i)``.

    Each factor touches a subset of the state given by an index array.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.factors: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []

    def add(self, index, A, y, W) -> "LinearProblem":
        index = np.atleast_1d(np.asarray(index, dtype=np.int64))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if A.shape != (y.size, index.size) or W.shape != (y.size, y.size):
            raise ValueError("factor shapes do not agree")
        self.factors.append((index, A, y, W))
        return self

    def _residual(self, q, f):
        index, A, y, _ = f
        return A @ q[index] - y

    def cost(self, q) -> float:
        total = 0.0
        for f in self.factors:
            e = self._residual(q, f)
            total += float(e @ f[3] @ e)
        return total

    def linearize(self, q) -> InformationSystem:
        rows, cols, vals = [], [], []
        b = np.zeros(self.dim)
        total = 0.0
        for f in self.factors:
            index, A, _, W = f
            e = self._residual(q, f)
            blk = A.T @ W @ A
            r, c, v = block_triplets(index[None, :], index[None, :], blk[None])
            rows.append(r)
            cols.append(c)
            vals.append(v)
            np.add.at(b, index, A.T @ W @ e)
            total += float(e @ W @ e)
        return InformationSystem(assemble(self.dim, rows, cols, vals), b, total)

    def retract(self, q, dq):
        return q + dq

    def jacobian(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense stacked ``(J, y, W)`` for closed-form checks."""
        J, Y, Ws = [], [], []
        for index, A, y, W in self.factors:
            row = np.zeros((y.size, self.dim))
            row[:, index] = A
            J.append(row)
            Y.append(y)
            Ws.append(W)
        return np.vstack(J), np.concatenate(Y), block_diag(*Ws)


def write_debug_csv(path, omega: sp.spmatrix, cost_trace) -> tuple[Path, Path]:
    """Write the sparsity pattern of ``omega`` and a cost trace as CSV."""
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    pattern = base / "omega_pattern.csv"
    trace = base / "cost_trace.csv"
    coo = sp.coo_matrix(omega)
    with pattern.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for r, c, v in zip(coo.row, coo.col, coo.data):
            w.writerow([int(r), int(c), repr(float(v))])
    with trace.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "cost"])
        for i, c in enumerate(cost_trace):
            w.writerow([i, repr(float(c))])
    return pattern, trace
