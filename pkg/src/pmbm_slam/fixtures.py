"""Small association fixtures with exactly enumerable posteriors.

Each fixture puts two nearby landmarks (and optionally a clutter return
near the first one) in view of a short dead-reckoned trajectory, with a
deliberately coarse measurement noise so that several partitions carry
noticeable posterior mass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .association.likelihood import CellScorer
from .association.partition import Partition, enumerate_partitions
from .association.sampler import DAChain, SamplerOptions
from .models import MeasurementBatch, ScenarioConfig, dead_reckon, measurement_mean
from .scenario import Q_LOW, orbit_config

# per scan: landmark row (0 or 1) or "c" for a clutter return
FIXTURES = {
    "crossing": (((0, 1), (0,), (1, 0, "c")), 0.3, 0),
    "two-tracks": (((0, 1), (0, 1), (1, 0)), 0.6, 0),
    "with-clutter": (((0, "c"), (0, 1), (1,)), 0.3, 2),
}


@dataclass(frozen=True, eq=False)
class OracleFixture:
    name: str
    cfg: ScenarioConfig
    traj: np.ndarray
    batch: MeasurementBatch

    def scorer(self) -> CellScorer:
        return CellScorer(self.batch, self.traj, self.cfg)

    def posterior(self) -> tuple[list[Partition], np.ndarray]:
        """All valid partitions and their normalised posterior probabilities."""
        sc = self.scorer()
        parts = enumerate_partitions(self.batch.index_set)
        lw = np.array([sc.partition_log_weight(p) for p in parts])
        w = np.exp(lw - lw.max())
        return parts, w / w.sum()


def make_fixture(name: str, range_std: float = 1.0) -> OracleFixture:
    layout, sep, seed = FIXTURES[name]
    rng = np.random.default_rng(seed)
    R = np.diag([range_std**2] + [(range_std / 20.0) ** 2] * 4)
    cfg = orbit_config(len(layout), 1.0, Q_LOW, 0, 1, true_landmarks=np.zeros((0, 3)), R=R)
    traj = dead_reckon(cfg)
    L = np.array([[50.0, 20.0, 5.0], [50.0 + sep, 20.0 + sep, 5.0]])
    scans = []
    for k, row in enumerate(layout, start=1):
        zs = []
        for o in row:
            if o == "c":
                zs.append(measurement_mean(L[0] + rng.normal(0.0, 2.0, 3), traj[k], cfg))
            else:
                zs.append(measurement_mean(L[o], traj[k], cfg) + rng.multivariate_normal(np.zeros(5), R))
        scans.append(np.array(zs).reshape(-1, 5))
    return OracleFixture(name, cfg, traj, MeasurementBatch(tuple(scans)))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True, eq=False)
class OracleCheck:
    name: str
    tv: float
    n_partitions: int
    n_samples: int
    seconds: float
    exact: np.ndarray
    empirical: np.ndarray


def oracle_check(fixture: OracleFixture, n_samples: int, rng: np.random.Generator,
                 options: SamplerOptions = SamplerOptions(), burn_in: int = 1000) -> OracleCheck:
    """Run one chain from all-singletons and compare its visit frequencies
    with the enumerated posterior."""
    t0 = time.perf_counter()
    parts, exact = fixture.posterior()
    scorer = fixture.scorer()
    index = {frozenset(p.to_masks(fixture.batch)): i for i, p in enumerate(parts)}
    chain = DAChain.singletons(scorer, options)
    chain.run(burn_in, rng)
    counts = np.zeros(len(parts))
    for _ in range(n_samples):
        chain.run(1, rng)
        counts[index[chain.key()]] += 1
    emp = counts / n_samples
    return OracleCheck(fixture.name, total_variation(exact, emp), len(parts), n_samples,
                       time.perf_counter() - t0, exact, emp)
