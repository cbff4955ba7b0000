"""Fusing the tail of GraphSLAM results into one trajectory density and one
multi-Bernoulli map. The undetected-landmark intensity is then thinned along
the merged path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association.partition import ExistenceVector, Partition
from .graphslam import GraphSlamResult
from .models import HEADING, STATE_DIM, MeasurementIndex, ScenarioConfig, wrap_angle
from .rfs import (
    BernoulliComponent,
    GaussianDensity,
    MultiBernoulli,
    ThinnedPoissonIntensity,
    mb_merge_close,
    mb_prune,
)


@dataclass(frozen=True, eq=False)
class SampleRecord:
    partition: Partition
    psi: ExistenceVector
    result: GraphSlamResult

    @property
    def cell_first_indices(self) -> list[MeasurementIndex]:
        return list(self.result.cell_first_indices)


@dataclass(frozen=True, eq=False)
class LandmarkRegistry:
    keys: tuple[MeasurementIndex, ...]
    sigma: np.ndarray  # (Gamma, |I|) 0/1 indicators

    def index_of(self, m: MeasurementIndex) -> int:
        return self.keys.index(m)

    def __len__(self):
        return len(self.keys)


@dataclass(frozen=True, eq=False)
class MergedPosterior:
    traj: GaussianDensity
    map: MultiBernoulli
    undetected: ThinnedPoissonIntensity
    registry: LandmarkRegistry

    @property
    def traj_mean(self) -> np.ndarray:
        return self.traj.mean.reshape(-1, STATE_DIM)

    @property
    def traj_std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.traj.cov), 0.0, None)).reshape(-1, STATE_DIM)


def _heading_mask(n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[HEADING::STATE_DIM] = True
    return mask


def merge_trajectories(samples: list[SampleRecord]) -> GaussianDensity:
    """Moment-matched Gaussian of the equally weighted trajectory mixture.

    Heading entries are averaged as offsets from the first sample, so the
    mean does not jump when headings straddle the +-pi seam.
    """
    if not samples:
        raise ValueError("need at least one sample")
    means = np.array([s.result.traj_mean.reshape(-1) for s in samples])
    covs = [s.result.traj_cov for s in samples]
    n = means.shape[1]
    if any(c.shape != (n, n) for c in covs):
        raise ValueError("trajectory samples differ in dimension")
    head = _heading_mask(n)
    ref = means[0]
    offs = means - ref
    offs[:, head] = wrap_angle(offs[:, head])
    mean_off = offs.mean(axis=0)
    mean = ref + mean_off
    mean[head] = wrap_angle(mean[head])
    dev = offs - mean_off
    cov = np.mean(covs, axis=0) + dev.T @ dev / len(samples)
    return GaussianDensity(mean, 0.5 * (cov + cov.T))


def register_landmarks(samples: list[SampleRecord]) -> LandmarkRegistry:
    keys = sorted({m for s in samples for m in s.cell_first_indices})
    pos = {m: i for i, m in enumerate(keys)}
    sigma = np.zeros((len(samples), len(keys)), dtype=np.int64)
    for t, s in enumerate(samples):
        for m in s.cell_first_indices:
            sigma[t, pos[m]] = 1
    return LandmarkRegistry(tuple(keys), sigma)


def landmark_mixture(samples: list[SampleRecord], registry: LandmarkRegistry) -> MultiBernoulli:
    """Per registry entry: ``r = count / Gamma`` and the moment-matched
    Gaussian over the samples that kept it. Nothing is pruned or merged."""
    gamma = len(samples)
    by_key: list[list[GaussianDensity]] = [[] for _ in registry.keys]
    pos = {m: i for i, m in enumerate(registry.keys)}
    for s in samples:
        for m, comp in zip(s.cell_first_indices, s.result.landmarks):
            by_key[pos[m]].append(comp.density)
    comps = []
    for dens in by_key:
        if not dens:
            continue
        mu = np.array([d.mean for d in dens])
        u = mu.mean(axis=0)
        dev = mu - u
        C = np.mean([d.cov for d in dens], axis=0) + dev.T @ dev / len(dens)
        comps.append(BernoulliComponent(len(dens) / gamma, GaussianDensity(u, 0.5 * (C + C.T))))
    return MultiBernoulli(tuple(comps))


def merge_landmarks(samples: list[SampleRecord], registry: LandmarkRegistry,
                    r_min: float = 0.1, dist_max: float = 1.0) -> MultiBernoulli:
    """Landmark mixture, then pruning below ``r_min``, then merging of
    components closer than ``dist_max``."""
    return mb_merge_close(mb_prune(landmark_mixture(samples, registry), r_min), dist_max)


def update_undetected_intensity(traj_mean, cfg: ScenarioConfig) -> ThinnedPoissonIntensity:
    """Birth intensity thinned by the misdetection probability along the
    merged mean trajectory (steps 1..K)."""
    traj = np.asarray(traj_mean, dtype=float).reshape(-1, STATE_DIM)
    return ThinnedPoissonIntensity(cfg.intensity, traj[1:, :3], cfg.pd, cfg.fov_radius)


def extract_map_estimate(mb: MultiBernoulli, r_report: float = 0.5) -> list[np.ndarray]:
    if not 0.0 <= r_report <= 1.0:
        raise ValueError("r_report must lie in [0, 1]")
    return [c.density.mean.copy() for c in mb.components if c.r >= r_report]


def merge_posterior(samples: list[SampleRecord], cfg: ScenarioConfig,
                    r_min: float = 0.1, dist_max: float = 1.0) -> MergedPosterior:
    traj = merge_trajectories(samples)
    registry = register_landmarks(samples)
    mb = merge_landmarks(samples, registry, r_min, dist_max)
    return MergedPosterior(traj, mb, update_undetected_intensity(traj.mean, cfg), registry)
