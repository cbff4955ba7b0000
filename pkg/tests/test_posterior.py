import numpy as np
import pytest

from pmbm_slam.association.partition import ExistenceVector, Partition
from pmbm_slam.graphslam import GraphSlamResult
from pmbm_slam.models import MeasurementIndex as M
from pmbm_slam.posterior import (
    SampleRecord,
    extract_map_estimate,
    merge_landmarks,
    merge_posterior,
    merge_trajectories,
    register_landmarks,
    update_undetected_intensity,
)
from pmbm_slam.rfs import BernoulliComponent, GaussianDensity, MultiBernoulli
from pmbm_slam.scenario import preset

DUMMY = Partition.from_groups([[(1, 1)]])


def record(traj, P, landmarks=()):
    """``landmarks`` is a list of (m_fir, mean, cov)."""
    traj = np.asarray(traj, dtype=float).reshape(-1, 5)
    comps = tuple(BernoulliComponent(1.0, GaussianDensity(u, C)) for _, u, C in landmarks)
    res = GraphSlamResult(
        traj, np.asarray(P, dtype=float), np.array([u for _, u, _ in landmarks]).reshape(-1, 3), None,
        MultiBernoulli(comps), [m for m, _, _ in landmarks], True, 0.0, 1, [0.0],
    )
    return SampleRecord(DUMMY, ExistenceVector((1,)), res)


def random_psd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.1 * np.eye(n)


def test_single_sample_identity(rng):
    traj = rng.normal(size=(3, 5))
    P = random_psd(rng, 15)
    g = merge_trajectories([record(traj, P)])
    np.testing.assert_array_equal(g.mean, traj.reshape(-1))
    np.testing.assert_allclose(g.cov, P, rtol=0, atol=1e-15)


def test_two_point_trajectory_moments(rng):
    base = rng.normal(size=10)
    d = rng.normal(size=10) * 0.1
    P = random_psd(rng, 10)
    g = merge_trajectories([record(base + d / 2, P), record(base - d / 2, P)])
    np.testing.assert_allclose(g.mean, base, atol=1e-12)
    np.testing.assert_allclose(g.cov, P + np.outer(d / 2, d / 2), atol=1e-12)


def test_heading_mean_across_seam():
    a = np.zeros(5)
    b = np.zeros(5)
    a[3], b[3] = np.pi - 0.1, -np.pi + 0.1
    g = merge_trajectories([record(a, np.eye(5)), record(b, np.eye(5))])
    assert abs(abs(g.mean[3]) - np.pi) < 1e-12
    assert g.cov[3, 3] == pytest.approx(1.0 + 0.01)


def test_mixture_covariance_psd(rng):
    for _ in range(10):
        recs = [record(rng.normal(size=10), random_psd(rng, 10)) for _ in range(int(rng.integers(1, 6)))]
        assert np.linalg.eigvalsh(merge_trajectories(recs).cov).min() > -1e-12


def lm(key, mean, cov=np.eye(3)):
    return (M(*key), np.asarray(mean, dtype=float), np.asarray(cov, dtype=float))


def test_registry_identical_samples():
    lms = [lm((1, 1), [0, 0, 0]), lm((2, 1), [5, 0, 0])]
    recs = [record(np.zeros(5), np.eye(5), lms) for _ in range(4)]
    reg = register_landmarks(recs)
    assert len(reg) == 2 and reg.sigma.min() == 1


def test_registry_union_and_bookkeeping():
    a = record(np.zeros(5), np.eye(5), [lm((1, 1), [0, 0, 0]), lm((1, 2), [5, 0, 0])])
    b = record(np.zeros(5), np.eye(5), [lm((2, 1), [9, 0, 0]), lm((2, 2), [20, 0, 0]), lm((3, 1), [30, 0, 0])])
    reg = register_landmarks([a, b])
    assert len(reg) == 5
    assert reg.sigma.sum(axis=1).tolist() == [2, 3]


def test_existence_counts():
    recs = []
    for t in range(100):
        lms = [lm((1, 1), [0, 0, 0])] + ([lm((2, 3), [10, 0, 0])] if t < 37 else [])
        recs.append(record(np.zeros(5), np.eye(5), lms))
    mb = merge_landmarks(recs, register_landmarks(recs), r_min=0.1, dist_max=1.0)
    assert sorted(mb.existence.tolist()) == [0.37, 1.0]
    same = mb.components[0] if mb.components[0].r == 1.0 else mb.components[1]
    np.testing.assert_array_equal(same.density.mean, [0, 0, 0])
    np.testing.assert_array_equal(same.density.cov, np.eye(3))


def test_two_sample_landmark_moments(rng):
    u, d, C = rng.normal(size=3), rng.normal(size=3) * 0.2, random_psd(rng, 3)
    recs = [record(np.zeros(5), np.eye(5), [lm((1, 1), u + d / 2, C)]),
            record(np.zeros(5), np.eye(5), [lm((1, 1), u - d / 2, C)])]
    c = merge_landmarks(recs, register_landmarks(recs), 0.1, 0.0).components[0]
    np.testing.assert_allclose(c.density.mean, u, atol=1e-12)
    np.testing.assert_allclose(c.density.cov, C + np.outer(d / 2, d / 2), atol=1e-12)


def test_extract_threshold():
    mb = MultiBernoulli((BernoulliComponent(0.9, GaussianDensity(np.ones(3), np.eye(3))),
                         BernoulliComponent(0.4, GaussianDensity(np.zeros(3), np.eye(3)))))
    assert len(extract_map_estimate(mb, 0.5)) == 1
    assert len(extract_map_estimate(mb, 0.0)) == 2
    assert extract_map_estimate(MultiBernoulli(), 0.5) == []


def test_undetected_intensity_thins_along_path():
    cfg = preset("I")
    traj = np.zeros((cfg.K + 1, 5))
    lam = update_undetected_intensity(traj, cfg)
    assert lam([0.0, 0.0, 1.0]) == pytest.approx(cfg.lambda_rate * 0.1**cfg.K)
    assert lam([140.0, 140.0, 0.0]) == pytest.approx(cfg.lambda_rate)


def test_merge_posterior_wires_parts():
    cfg = preset("I", K=2)
    recs = [record(np.zeros(15), np.eye(15), [lm((1, 1), [1, 2, 3])]) for _ in range(3)]
    post = merge_posterior(recs, cfg)
    assert post.traj_mean.shape == (3, 5)
    assert len(post.map) == 1 and post.map.components[0].r == 1.0
    assert len(post.registry) == 1
