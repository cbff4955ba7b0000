import csv

import numpy as np
import pytest
import scipy.sparse as sp

from pmbm_slam.association.partition import ExistenceVector, Partition
from pmbm_slam.graph import (
    InformationSystem,
    LinearProblem,
    covariance,
    optimize,
    solve_increment,
    write_debug_csv,
)
from pmbm_slam.graphslam import build_graph, solve
from pmbm_slam.models import dead_reckon

CELLS = [[(1, 1), (2, 1)], [(1, 2), (3, 1)], [(3, 2), (4, 1)]]


def graph_for(small_problem, flags=None):
    """Three two-detection cells, or all singletons flagged absent."""
    cfg, traj, batch = small_problem
    if flags is None:
        p = Partition.singletons(batch.index_set)
        flags = (0,) * len(batch)
    else:
        p = Partition.from_groups(CELLS)
    return build_graph(p, ExistenceVector(flags), traj, batch, cfg)


def test_identity_system():
    v = np.array([1.0, -2.0, 3.0])
    dq = solve_increment(InformationSystem(sp.identity(3, format="csc"), v, 0.0))
    np.testing.assert_allclose(dq, -v, atol=1e-14)


def test_block_diagonal_matches_block_solves(rng):
    blocks = []
    for n in (2, 3, 4):
        A = rng.normal(size=(n, n))
        blocks.append(A @ A.T + n * np.eye(n))
    omega = sp.block_diag(blocks, format="csc")
    b = rng.normal(size=9)
    dq = solve_increment(InformationSystem(omega, b, 0.0))
    start = 0
    for B in blocks:
        n = B.shape[0]
        np.testing.assert_allclose(dq[start:start + n], -np.linalg.solve(B, b[start:start + n]), rtol=1e-10)
        start += n
    assert np.linalg.norm(omega @ dq + b) / np.linalg.norm(b) < 1e-10


def test_single_linear_factor_information(rng):
    A = rng.normal(size=(3, 4))
    W = np.diag([1.0, 2.0, 3.0])
    prob = LinearProblem(4).add(np.arange(4), A, rng.normal(size=3), W)
    sys = prob.linearize(np.zeros(4))
    np.testing.assert_allclose(sys.omega.toarray(), A.T @ W @ A, rtol=1e-14, atol=1e-14)


def test_single_residual_perturbation():
    R = np.diag([0.1**2, 0.02**2, 0.5**2])
    prob = LinearProblem(3).add(np.arange(3), np.eye(3), np.zeros(3), np.linalg.inv(R))
    delta = np.array([0.3, -0.1, 0.2])
    assert prob.cost(np.zeros(3)) == 0.0
    assert prob.cost(delta) == pytest.approx(delta @ np.linalg.inv(R) @ delta, rel=1e-14)


def test_chain_matches_generalised_least_squares(rng):
    # 1-D chain: prior on x0, odometry x_k - x_{k-1} = u_k, direct position fixes
    K = 3
    prob = LinearProblem(K + 1)
    prob.add([0], [[1.0]], [0.0], [[1 / 0.1]])
    for k in range(1, K + 1):
        prob.add([k - 1, k], [[-1.0, 1.0]], [1.0 + rng.normal(0, 0.1)], [[1 / 0.05]])
        prob.add([k], [[1.0]], [k + rng.normal(0, 0.2)], [[1 / 0.2]])
    J, y, W = prob.jacobian()
    info = J.T @ W @ J
    gls = np.linalg.solve(info, J.T @ W @ y)
    res = optimize(prob, np.zeros(K + 1))
    np.testing.assert_allclose(res.q, gls, rtol=1e-8)
    np.testing.assert_allclose(covariance(res.omega), np.linalg.inv(info), rtol=1e-8)
    assert res.iterations <= 2


def test_graph_layout(small_problem):
    cfg, traj, batch = small_problem
    empty = graph_for(small_problem)
    assert empty.kappa == 0 and empty.dim == 5 * (batch.K + 1) and len(empty.z) == 0
    full = graph_for(small_problem, (1, 1, 1))
    assert full.dim == 5 * (batch.K + 1) + 9
    ids = sorted(batch.id_of(m) for c in full.kept_cells for m in c)
    assert ids == list(range(len(batch)))
    assert len(full.z) == len(batch)
    for row, cell in enumerate(full.kept_cells):
        assert int((full.lm_of == row).sum()) == len(cell)


def test_prior_only_cost_zero_and_map(small_problem):
    cfg, traj, batch = small_problem
    prob = graph_for(small_problem)
    q = prob.initial_state(dead_reckon(cfg, batch.K))
    assert prob.cost(q) == pytest.approx(0.0, abs=1e-20)
    res = solve(prob, q)
    np.testing.assert_allclose(res.traj_mean, dead_reckon(cfg, batch.K), atol=1e-9)


def test_cost_nonnegative_and_gradient(small_problem, rng):
    prob = graph_for(small_problem, (1, 1, 1))
    q0 = prob.initial_state(small_problem[1][: prob.K + 1])
    for _ in range(5):
        q = q0 + rng.normal(0, 0.05, prob.dim)
        assert prob.cost(q) >= 0.0
        sys = prob.linearize(q)
        assert abs(sys.omega - sys.omega.T).max() <= 1e-12 * abs(sys.omega).max()
        h = 1e-6
        fd = np.array([(prob.cost(q + h * e) - prob.cost(q - h * e)) / (2 * h) for e in np.eye(prob.dim)])
        assert np.linalg.norm(fd - 2 * sys.b) <= 1e-6 * np.linalg.norm(fd)


def test_solution_recovers_truth(small_problem):
    cfg, traj, batch = small_problem
    prob = graph_for(small_problem, (1, 1, 1))
    res = solve(prob, prob.initial_state(traj[: batch.K + 1]))
    assert res.converged
    assert all(b <= a for a, b in zip(res.cost_trace, res.cost_trace[1:]))
    want = cfg.true_landmarks[[0, 1, 2]]
    np.testing.assert_allclose(res.map_mean, want, atol=1e-3)
    assert res.step_covariances.shape == (batch.K + 1, 5, 5)
    assert len(res.landmarks) == 3


def test_debug_csv(tmp_path, small_problem):
    prob = graph_for(small_problem, (1, 1, 1))
    res = solve(prob, prob.initial_state(small_problem[1][: prob.K + 1]))
    pattern, trace = write_debug_csv(tmp_path, res.omega, res.cost_trace)
    with trace.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "cost"] and len(rows) == len(res.cost_trace) + 1
    assert pattern.read_text().startswith("row,col,value")


def test_initial_state_checks_length(small_problem):
    prob = graph_for(small_problem, (1, 1, 1))
    with pytest.raises(ValueError):
        prob.initial_state(small_problem[1])
