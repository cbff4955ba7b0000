"""Synthetic bistatic-radio scenarios with their ground-truth association."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association.partition import Partition
from .models import (
    MeasurementBatch,
    MeasurementIndex,
    ScenarioConfig,
    measurement_mean,
    motion_sample,
    wrap_angle,
)
from .rfs import Box, GaussianDensity

BS = np.array([0.0, 0.0, 40.0])
R_NOMINAL = np.diag([0.1**2, 0.01**2, 0.01**2, 0.01**2, 0.01**2])
Q_LOW = np.diag([0.2**2, 0.2**2, 0.0, 0.001**2, 0.2**2])
Q_HIGH = 8.0 * Q_LOW
PRESETS = {"I": (1.0, Q_LOW), "II": (5.0, Q_LOW), "III": (1.0, Q_HIGH), "IV": (5.0, Q_HIGH)}

ORBIT_RADIUS = 40.0
SPEED = 2.0


@dataclass(frozen=True, eq=False)
class GroundTruth:
    trajectory: np.ndarray  # (K+1, 5)
    associations: Partition
    landmarks: np.ndarray  # (n, 3)
    origins: np.ndarray  # landmark row per measurement id, -1 for clutter


def cluster_layout(n_landmarks: int, n_clusters: int, arc: float, seed: int = 7) -> np.ndarray:
    """Landmarks in clusters spread along the orbit's arc.

    Cluster centres alternate between inside and outside the orbit and the
    members scatter a few metres around them; the layout is a fixed function
    of the arguments.
    """
    rng = np.random.default_rng(seed)
    angles = np.linspace(0.0, arc, n_clusters + 2)[1:-1]
    centres = []
    for j, a in enumerate(angles):
        radius = ORBIT_RADIUS + (-14.0 if j % 2 else 16.0)
        centres.append([radius * np.cos(a), radius * np.sin(a), 6.0 + 4.0 * (j % 3)])
    centres = np.array(centres)
    sizes = np.full(n_clusters, n_landmarks // n_clusters)
    sizes[: n_landmarks % n_clusters] += 1
    pts = []
    for c, s in zip(centres, sizes):
        for _ in range(s):
            pts.append(c + rng.uniform(-3.0, 3.0, 3) * np.array([1.0, 1.0, 0.5]))
    return np.array(pts).reshape(-1, 3)


def orbit_config(K: int, clutter_rate: float, Q, n_landmarks: int, n_clusters: int, **overrides) -> ScenarioConfig:
    turn = SPEED / ORBIT_RADIUS
    s0 = np.array([ORBIT_RADIUS, 0.0, 0.0, np.pi / 2, 0.0])
    arc = K * turn
    kw = dict(
        bs_position=BS.copy(),
        true_landmarks=cluster_layout(n_landmarks, n_clusters, arc),
        K=K,
        pd=0.9,
        fov_radius=50.0,
        clutter_rate=clutter_rate,
        R=R_NOMINAL.copy(),
        Q=np.asarray(Q, dtype=float).copy(),
        speed=SPEED,
        turn_rate=turn,
        env_box=Box(np.array([-150.0, -150.0, -30.0]), np.array([150.0, 150.0, 60.0])),
        lambda_rate=1.5e-5,
        s0_prior=GaussianDensity(s0, np.diag([0.1**2, 0.1**2, 1e-4**2, 0.001**2, 0.1**2])),
        birth_cov=np.eye(3) * 100.0**2,
    )
    kw.update(overrides)
    return ScenarioConfig(**kw)


def preset(name: str, scale: str = "desk", **overrides) -> ScenarioConfig:
    """Scenario presets I-IV.

    ``scale="full"`` uses 20 landmarks in 8 clusters over 40 steps; the
    default desk scale uses 8 landmarks in 4 clusters over 20 steps.
    """
    try:
        rate, Q = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    if scale == "full":
        K, n_lm, n_cl = 40, 20, 8
    elif scale == "desk":
        K, n_lm, n_cl = 20, 8, 4
    else:
        raise ValueError("scale must be 'full' or 'desk'")
    K = int(overrides.pop("K", K))
    rate = overrides.pop("clutter_rate", rate)
    Q = overrides.pop("Q", Q)
    return orbit_config(K, rate, Q, n_lm, n_cl, **overrides)


def _clutter(cfg: ScenarioConfig, s: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    base = np.linalg.norm(cfg.bs_position - s[:3]) + s[4]
    out = np.empty((n, 5))
    out[:, 0] = base + rng.uniform(0.0, 2.0 * cfg.fov_radius, n)
    out[:, 1] = wrap_angle(rng.uniform(-np.pi, np.pi, n))
    out[:, 2] = rng.uniform(-np.pi / 2, np.pi / 2, n)
    out[:, 3] = wrap_angle(rng.uniform(-np.pi, np.pi, n))
    out[:, 4] = rng.uniform(-np.pi / 2, np.pi / 2, n)
    return out


def generate_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[GroundTruth, MeasurementBatch]:
    K = cfg.K
    traj = np.empty((K + 1, 5))
    traj[0] = cfg.s0_prior.mean
    for k in range(1, K + 1):
        traj[k] = motion_sample(traj[k - 1], cfg, rng).to_vector()
    landmarks = cfg.true_landmarks
    scans = []
    origins_per_scan = []
    for k in range(1, K + 1):
        s = traj[k]
        rows, orig = [], []
        for i, x in enumerate(landmarks):
            if np.linalg.norm(x - s[:3]) > cfg.fov_radius or rng.random() >= cfg.pd:
                continue
            z = measurement_mean(x, s, cfg) + rng.multivariate_normal(np.zeros(5), cfg.R, method="eigh")
            z[1:] = wrap_angle(z[1:])
            rows.append(z)
            orig.append(i)
        n_c = rng.poisson(cfg.clutter_rate) if cfg.clutter_rate > 0 else 0
        if n_c:
            rows.extend(_clutter(cfg, s, rng, n_c))
            orig.extend([-1] * n_c)
        perm = rng.permutation(len(rows))
        scans.append(np.array([rows[p] for p in perm]).reshape(-1, 5))
        origins_per_scan.append([orig[p] for p in perm])
    batch = MeasurementBatch(tuple(scans))
    origins = np.array([o for scan in origins_per_scan for o in scan], dtype=np.int64)
    groups: dict = {}
    for idx, o in zip(batch.index_set, origins):
        key = ("lm", int(o)) if o >= 0 else ("clutter", idx)
        groups.setdefault(key, []).append(MeasurementIndex(*idx))
    truth = Partition.from_groups(groups.values()).validate(batch.index_set)
    return GroundTruth(traj, truth, landmarks.copy(), origins), batch

