"""Data-association hypotheses as partitions of the measurement index set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..models import MeasurementBatch, MeasurementIndex

ENUMERATION_LIMIT = 10


class InvalidPartition(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    """Measurement indices attributed to one source, at most one per scan."""

    indices: frozenset

    def __post_init__(self):
        idx = frozenset(MeasurementIndex(*m) for m in self.indices)
        if not idx:
            raise InvalidPartition("a cell must not be empty")
        steps = [m.k for m in idx]
        if len(set(steps)) != len(steps):
            raise InvalidPartition(f"cell holds two measurements of the same scan: {sorted(idx)}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(sorted(self.indices))

    def __contains__(self, m):
        return MeasurementIndex(*m) in self.indices

    @property
    def first(self) -> MeasurementIndex:
        """The earliest index, used as the landmark's identity across samples."""
        return min(self.indices)

    @property
    def steps(self) -> frozenset[int]:
        return frozenset(m.k for m in self.indices)


@dataclass(frozen=True)
class Partition:
    cells: frozenset

    def __post_init__(self):
        cells = frozenset(c if isinstance(c, Cell) else Cell(frozenset(c)) for c in self.cells)
        seen: set = set()
        for c in cells:
            if seen & c.indices:
                raise InvalidPartition("cells overlap")
            seen |= c.indices
        object.__setattr__(self, "cells", cells)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.ordered_cells())

    @property
    def index_set(self) -> frozenset:
        return frozenset().union(*(c.indices for c in self.cells)) if self.cells else frozenset()

    def validate(self, index_set: Iterable) -> "Partition":
        expected = frozenset(MeasurementIndex(*m) for m in index_set)
        if self.index_set != expected:
            raise InvalidPartition("partition does not cover the index set exactly")
        return self

    def ordered_cells(self) -> list[Cell]:
        """Cells sorted by their earliest index; existence vectors follow this order."""
        return sorted(self.cells, key=lambda c: c.first)

    def cell_of(self, m) -> Cell:
        m = MeasurementIndex(*m)
        for c in self.cells:
            if m in c.indices:
                return c
        raise KeyError(m)

    @classmethod
    def singletons(cls, index_set: Iterable) -> "Partition":
        return cls(frozenset(Cell(frozenset([MeasurementIndex(*m)])) for m in index_set))

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable]) -> "Partition":
        return cls(frozenset(Cell(frozenset(MeasurementIndex(*m) for m in g)) for g in groups))

    # -- bitmask interchange with the sampler -------------------------------
    def to_masks(self, batch: MeasurementBatch) -> list[int]:
        masks = []
        for c in self.ordered_cells():
            mask = 0
            for m in c.indices:
                mask |= 1 << batch.id_of(m)
            masks.append(mask)
        return masks

    @classmethod
    def from_masks(cls, batch: MeasurementBatch, masks: Iterable[int]) -> "Partition":
        idx = batch.index_set
        return cls(frozenset(Cell(frozenset(idx[i] for i in iter_bits(mask))) for mask in masks))

    def labels(self, batch: MeasurementBatch) -> np.ndarray:
        """Integer cell label per measurement id (cells numbered in
        :meth:`ordered_cells` order)."""
        out = np.full(len(batch), -1, dtype=np.int64)
        for j, c in enumerate(self.ordered_cells()):
            for m in c.indices:
                out[batch.id_of(m)] = j
        return out


@dataclass(frozen=True)
class ExistenceVector:
    """Existence flags aligned with ``Partition.ordered_cells()``."""

    psi: tuple[int, ...]

    def __post_init__(self):
        psi = tuple(int(v) for v in self.psi)
        if any(v not in (0, 1) for v in psi):
            raise ValueError("existence flags must be 0 or 1")
        object.__setattr__(self, "psi", psi)

    def __len__(self):
        return len(self.psi)

    def __iter__(self):
        return iter(self.psi)

    def check(self, p: Partition) -> "ExistenceVector":
        cells = p.ordered_cells()
        if len(cells) != len(self.psi):
            raise ValueError("existence vector length differs from the number of cells")
        for c, v in zip(cells, self.psi):
            if len(c) > 1 and v != 1:
                raise ValueError("a cell with several measurements must exist")
        return self


def iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def enumerate_partitions(index_set: Sequence) -> list[Partition]:
    """All valid partitions of a small index set.

    Measurements are placed one at a time either into an existing block that
    has no measurement of the same scan yet or into a new block, which yields
    every set partition exactly once.
    """
    items = sorted(MeasurementIndex(*m) for m in index_set)
    if len(items) > ENUMERATION_LIMIT:
        raise ValueError(f"refusing to enumerate partitions of {len(items)} > {ENUMERATION_LIMIT} indices")
    if len(set(items)) != len(items):
        raise ValueError("duplicate measurement indices")
    out: list[Partition] = []

    def rec(i: int, blocks: list[list[MeasurementIndex]]):
        if i == len(items):
            out.append(Partition.from_groups(blocks))
            return
        m = items[i]
        for b in blocks:
            if all(x.k != m.k for x in b):
                b.append(m)
                rec(i + 1, blocks)
                b.pop()
        blocks.append([m])
        rec(i + 1, blocks)
        blocks.pop()

    rec(0, [])
    return out
