import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmbm_slam.association.partition import (
    Cell,
    ExistenceVector,
    InvalidPartition,
    Partition,
    enumerate_partitions,
)
from pmbm_slam.models import MeasurementBatch, MeasurementIndex as M


def test_two_steps_two_partitions():
    assert len(enumerate_partitions([(1, 1), (2, 1)])) == 2


def test_same_step_cannot_merge():
    assert len(enumerate_partitions([(1, 1), (1, 2)])) == 1


def test_three_indices_with_one_shared_step():
    # all singletons; {(1,1),(2,1)}; {(1,1),(2,2)}. The two step-2 indices can
    # never share a cell, so no other grouping is valid.
    parts = enumerate_partitions([(1, 1), (2, 1), (2, 2)])
    assert len(parts) == 3
    assert len({p for p in parts}) == 3


def _bell_with_steps(steps):
    """Brute-force count of set partitions whose blocks hold distinct steps."""
    n = len(steps)

    def rec(i, blocks):
        if i == n:
            return 1
        total = 0
        for b in blocks:
            if all(steps[j] != steps[i] for j in b):
                b.append(i)
                total += rec(i + 1, blocks)
                b.pop()
        blocks.append([i])
        total += rec(i + 1, blocks)
        blocks.pop()
        return total

    return rec(0, [])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=7))
def test_enumeration_count_and_validity(steps):
    idx = []
    seen = {}
    for k in steps:
        seen[k] = seen.get(k, 0) + 1
        idx.append(M(k, seen[k]))
    parts = enumerate_partitions(idx)
    assert len(parts) == _bell_with_steps(steps)
    assert len(set(parts)) == len(parts)
    for p in parts:
        p.validate(idx)


def test_invalid_cells_rejected():
    with pytest.raises(InvalidPartition):
        Cell(frozenset({M(1, 1), M(1, 2)}))
    with pytest.raises(InvalidPartition):
        Partition.from_groups([[(1, 1)], [(1, 1), (2, 1)]])
    p = Partition.from_groups([[(1, 1)]])
    with pytest.raises(InvalidPartition):
        p.validate([(1, 1), (2, 1)])


def test_enumeration_guard():
    with pytest.raises(ValueError):
        enumerate_partitions([(k, 1) for k in range(1, 13)])


def test_mask_round_trip():
    batch = MeasurementBatch((np.zeros((2, 5)), np.zeros((1, 5)), np.zeros((2, 5))))
    p = Partition.from_groups([[(1, 1), (2, 1), (3, 2)], [(1, 2)], [(3, 1)]])
    assert Partition.from_masks(batch, p.to_masks(batch)) == p
    labels = p.labels(batch)
    assert labels.tolist() == [0, 1, 0, 2, 0]
    assert [c.first for c in p.ordered_cells()] == [M(1, 1), M(1, 2), M(3, 1)]


def test_existence_vector_rules():
    p = Partition.from_groups([[(1, 1), (2, 1)], [(1, 2)]])
    ExistenceVector((1, 0)).check(p)
    with pytest.raises(ValueError):
        ExistenceVector((0, 1)).check(p)
    with pytest.raises(ValueError):
        ExistenceVector((1,)).check(p)
    with pytest.raises(ValueError):
        ExistenceVector((2, 0))
