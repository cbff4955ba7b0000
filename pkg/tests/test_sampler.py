import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmbm_slam.association.kmeans import sample_split, split_distribution
from pmbm_slam.association.likelihood import CellScorer, existence_probability
from pmbm_slam.association.partition import Partition
from pmbm_slam.association.sampler import (
    DAChain,
    SamplerOptions,
    da_sample,
    gibbs_sweep,
    mh_sweep,
    sample_existence,
)
from pmbm_slam.fixtures import make_fixture, total_variation
from pmbm_slam.models import dead_reckon

from conftest import noiseless_batch


class FixedU:
    """Stand-in generator whose uniform draws are a constant."""

    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


def test_same_step_singletons_stay_apart(cfg):
    traj = dead_reckon(cfg)
    batch = noiseless_batch(cfg, traj, [[0, 1]])
    chain = DAChain.singletons(CellScorer(batch, traj, cfg))
    assert len(chain.gibbs_candidates(0)) == 1
    for seed in range(20):
        assert gibbs_sweep(chain.partition(), chain.scorer, np.random.default_rng(seed)) == chain.partition()


def test_candidate_pmf_normalises(small_problem, rng):
    cfg, traj, batch = small_problem
    chain = DAChain.singletons(CellScorer(batch, traj, cfg), SamplerOptions(gate_distance=math.inf))
    chain.run(3, rng)
    for m in range(len(batch)):
        lw = np.array([c[0] for c in chain.gibbs_candidates(m)])
        w = np.exp(lw - lw.max())
        assert (w / w.sum()).sum() == pytest.approx(1.0)


def test_candidate_ratios_match_recomputation(small_problem, rng):
    cfg, traj, batch = small_problem
    chain = DAChain.singletons(CellScorer(batch, traj, cfg), SamplerOptions(gate_distance=math.inf))
    for _ in range(10):
        chain.run(1, rng)
        base = chain.log_weight()
        for m in range(len(batch)):
            for lw, old, new in chain.gibbs_candidates(m):
                masks = (chain.masks - set(old)) | {x for x in new if x}
                alt = DAChain(chain.scorer, masks, chain.options)
                assert abs(lw - (alt.log_weight() - base)) < 1e-10
                Partition.from_masks(batch, masks).validate(batch.index_set)


def test_singleton_cannot_split():
    assert split_distribution(np.zeros((1, 3)), 0) == {}
    assert sample_split({}, np.random.default_rng(0)) is None


def test_split_distribution_sums_to_at_most_one(rng):
    for _ in range(50):
        pts = rng.normal(size=(int(rng.integers(2, 7)), 3))
        dist = split_distribution(pts, int(rng.integers(len(pts))))
        assert sum(dist.values()) <= 1.0 + 1e-12
        assert all(v > 0 for v in dist.values())


def test_shared_step_cells_never_merge(small_problem):
    cfg, traj, batch = small_problem
    # ids: 0=(1,1) 1=(1,2) 2=(2,1) 3=(3,1) 4=(3,2) 5=(4,1)
    masks = [0b000101, 0b000010, 0b001000, 0b010000, 0b100000]
    chain = DAChain(CellScorer(batch, traj, cfg), masks, SamplerOptions(gate_distance=math.inf))
    for seed in range(50):
        assert not chain.split_merge_step(1, 0, np.random.default_rng(seed))
        assert not chain.split_merge_step(0, 1, np.random.default_rng(seed))
    assert chain.masks == set(masks)


@pytest.mark.parametrize("hastings", [True, False])
def test_favourable_merge_always_accepted(small_problem, hastings):
    cfg, traj, batch = small_problem
    sc = CellScorer(batch, traj, cfg)
    assert sc.log_l(0b101) > sc.log_l(0b001) + sc.log_l(0b100)
    for u in (0.0, 0.5, 0.999999):
        chain = DAChain.singletons(sc, SamplerOptions(hastings=hastings))
        assert chain.split_merge_step(0, 2, FixedU(u))
        assert 0b101 in chain.masks


def test_split_merge_detailed_balance(small_problem):
    """Two-index cells have a single possible split, so both proposals are
    deterministic and the min-rule acceptances must balance the weights."""
    cfg, traj, batch = small_problem
    sc = CellScorer(batch, traj, cfg)
    pair, a, b = 0b101, 0b001, 0b100
    rest = [0b000010, 0b001000, 0b010000, 0b100000]
    log_ratio = sc.log_l(pair) - sc.log_l(a) - sc.log_l(b)
    a_merge = min(1.0, math.exp(log_ratio))
    a_split = min(1.0, math.exp(-log_ratio))
    # min-rule reversibility: pi(split) * a_merge == pi(merged) * a_split
    assert math.exp(-log_ratio) * a_merge == pytest.approx(a_split, rel=1e-12)
    for u in (0.0, 0.3 * a_split, 0.99 * a_split, min(1.0, 1.01 * a_split)):
        chain = DAChain(sc, rest + [pair], SamplerOptions(gate_distance=math.inf))
        accepted = chain.split_merge_step(0, 2, FixedU(u))
        assert accepted == (u < a_split or a_split >= 1.0)
        chain = DAChain(sc, rest + [a, b], SamplerOptions(gate_distance=math.inf))
        assert chain.split_merge_step(0, 2, FixedU(u))  # merge ratio > 1 here


def test_zero_rounds_is_identity(small_problem, rng):
    cfg, traj, batch = small_problem
    p = Partition.singletons(batch.index_set)
    assert da_sample(p, CellScorer(batch, traj, cfg), 0, rng) is p


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), moves=st.sampled_from(["combined", "gibbs", "mh"]))
def test_outputs_are_valid_partitions(small_problem, seed, moves):
    cfg, traj, batch = small_problem
    sc = CellScorer(batch, traj, cfg)
    rng = np.random.default_rng(seed)
    p = da_sample(Partition.singletons(batch.index_set), sc, 3, rng, SamplerOptions(moves=moves))
    p.validate(batch.index_set)
    mh_sweep(p, sc, rng).validate(batch.index_set)


def test_existence_rules(small_problem, rng):
    cfg, traj, batch = small_problem
    sc = CellScorer(batch, traj, cfg)
    p = Partition.from_groups([[(1, 1), (2, 1)], [(1, 2), (3, 1)], [(3, 2), (4, 1)]])
    for _ in range(20):
        assert tuple(sample_existence(p, sc, rng)) == (1, 1, 1)
    assert existence_probability(sc.log_c, sc.log_c) == pytest.approx(0.5)


def test_existence_floor(small_problem, rng):
    cfg, traj, batch = small_problem
    sc = CellScorer(batch, traj, cfg.replace(lambda_rate=1e-300))
    psi = sample_existence(Partition.singletons(batch.index_set), sc, rng, psi_floor=1e-4)
    assert set(psi) == {0}


@pytest.mark.slow
def test_random_start_chains_match_enumeration():
    """Many short chains from uniformly drawn valid partitions on a
    5-measurement fixture."""
    fx = make_fixture("with-clutter")
    parts, exact = fx.posterior()
    sc = fx.scorer()
    index = {p: i for i, p in enumerate(parts)}
    rng = np.random.default_rng(99)
    n_chains = 10_000
    counts = np.zeros(len(parts))
    for _ in range(n_chains):
        init = parts[int(rng.integers(len(parts)))]
        counts[index[da_sample(init, sc, 20, rng)]] += 1
    assert total_variation(exact, counts / n_chains) <= 0.05
