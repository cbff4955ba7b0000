"""Motion and measurement models for the bistatic radio setting.

A single base station (BS) at a known position transmits; the user equipment
(UE) is the sensor. Each scattering point (landmark) produces a measurement
``[bistatic range, AOD azimuth, AOD elevation, AOA azimuth, AOA elevation]``
where the AOD angles are seen from the BS in the global frame and the AOA
angles are seen from the UE relative to its heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as kern
from .rfs import Box, GaussianDensity, UniformPoissonIntensity

STATE_DIM = 5  # [x, y, z, heading, clock_bias]
LANDMARK_DIM = 3
MEAS_DIM = 5
HEADING = 3
ANGLE_COMPONENTS = (1, 2, 3, 4)


class GeometryError(ValueError):
    """Landmark coincides with the BS or the UE, angles are undefined."""


class InfeasibleMeasurement(ValueError):
    """No landmark position reproduces the measured bistatic range."""


def wrap_angle(a):
    """Wrap angles to (-pi, pi]; values already in range are returned unchanged."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class SensorState:
    position: tuple[float, float, float]
    heading: float
    clock_bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        object.__setattr__(self, "clock_bias", float(self.clock_bias))

    def to_vector(self) -> np.ndarray:
        return np.array([*self.position, self.heading, self.clock_bias])

    @classmethod
    def from_vector(cls, v) -> "SensorState":
        v = np.asarray(v, dtype=float)
        return cls(tuple(v[:3]), v[3], v[4])


class MeasurementIndex(NamedTuple):
    """Measurement ``alpha`` (1-based) of scan ``k`` (1-based)."""

    k: int
    alpha: int


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    """Measurements of all ``K`` scans.

    ``scans[k-1]`` is an ``(n_k, 5)`` array. ``index_set`` lists every
    :class:`MeasurementIndex` in lexicographic order; position ``i`` in that
    list is the integer id used by the association engine.
    """

    scans: tuple[np.ndarray, ...]

    def __post_init__(self):
        scans = tuple(np.asarray(z, dtype=float).reshape(-1, MEAS_DIM) for z in self.scans)
        object.__setattr__(self, "scans", scans)
        index = [MeasurementIndex(k + 1, a + 1) for k, z in enumerate(scans) for a in range(len(z))]
        object.__setattr__(self, "index_set", tuple(index))
        object.__setattr__(self, "_pos", {m: i for i, m in enumerate(index)})
        if index:
            object.__setattr__(self, "z", np.vstack([z for z in scans if len(z)]))
        else:
            object.__setattr__(self, "z", np.zeros((0, MEAS_DIM)))
        object.__setattr__(self, "steps", np.array([m.k for m in index], dtype=np.int64))

    @property
    def K(self) -> int:
        return len(self.scans)

    def __len__(self):
        return len(self.index_set)

    def id_of(self, m: MeasurementIndex) -> int:
        return self._pos[MeasurementIndex(*m)]

    def measurement(self, m: MeasurementIndex) -> np.ndarray:
        return self.scans[m.k - 1][m.alpha - 1]


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Physical and model parameters of a scenario.

    ``clutter_rate`` is the expected number of clutter measurements per scan,
    ``lambda_rate`` the undetected-landmark intensity in landmarks per m^3
    over ``env_box`` and ``birth_cov`` the broad landmark prior used when a
    landmark is initialised from a single measurement.
    """

    bs_position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 40.0]))
    true_landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    K: int = 40
    pd: float = 0.9
    fov_radius: float = 50.0
    clutter_rate: float = 1.0
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1**2] + [0.01**2] * 4))
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.2**2, 0.2**2, 0.0, 0.001**2, 0.2**2]))
    speed: float = 1.0
    turn_rate: float = 0.0
    env_box: Box = field(default_factory=lambda: Box(np.array([-150.0, -150.0, -30.0]), np.array([150.0, 150.0, 60.0])))
    lambda_rate: float = 1.5e-5
    s0_prior: GaussianDensity = field(
        default_factory=lambda: GaussianDensity(np.zeros(5), np.diag([0.1**2, 0.1**2, 0.1**2, 0.001**2, 0.1**2]))
    )
    birth_cov: np.ndarray = field(default_factory=lambda: np.eye(3) * 100.0**2)
    process_floor: float = 1e-6

    def __post_init__(self):
        for name in ("bs_position", "R", "Q", "birth_cov"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "true_landmarks", np.asarray(self.true_landmarks, dtype=float).reshape(-1, 3))
        if not 0.0 < self.pd <= 1.0:
            raise ValueError("pd must lie in (0, 1]")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be non-negative")
        if self.fov_radius <= 0:
            raise ValueError("fov_radius must be positive")
        for name, shape in (("R", (5, 5)), ("Q", (5, 5)), ("birth_cov", (3, 3))):
            m = getattr(self, name)
            if m.shape != shape or not np.allclose(m, m.T):
                raise ValueError(f"{name} must be a symmetric {shape} matrix")
            if np.linalg.eigvalsh(m).min() < -1e-12:
                raise ValueError(f"{name} must be positive semi-definite")

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @property
    def intensity(self) -> UniformPoissonIntensity:
        return UniformPoissonIntensity(self.lambda_rate, self.env_box)

    @property
    def clutter_box_widths(self) -> np.ndarray:
        """Widths of the measurement-space box clutter is uniform over: the
        range window ``2 * fov_radius`` and full azimuth/elevation spans."""
        return np.array([2.0 * self.fov_radius, 2 * np.pi, np.pi, 2 * np.pi, np.pi])

    @property
    def clutter_density(self) -> float:
        return self.clutter_rate / float(np.prod(self.clutter_box_widths))

    @property
    def log_clutter_density(self) -> float:
        c = self.clutter_density
        return math.log(c) if c > 0 else -math.inf

    @property
    def graph_Q(self) -> np.ndarray:
        """Process covariance with zero-variance directions floored so it can
        be inverted in the graph cost."""
        d = np.diag(self.Q).copy()
        floor = self.process_floor * max(d.max(), 1e-300)
        Q = self.Q.copy()
        Q[np.diag_indices(5)] = np.maximum(d, floor)
        return Q


def _as_vec(s) -> np.ndarray:
    if isinstance(s, SensorState):
        return s.to_vector()
    return np.asarray(s, dtype=float)


def motion_mean(s: SensorState, cfg: ScenarioConfig) -> SensorState:
    """Coordinated turn: rotate the heading by ``turn_rate`` then advance
    ``speed`` metres along it in the horizontal plane."""
    return SensorState.from_vector(kern.motion_mean(_as_vec(s), cfg.speed, cfg.turn_rate))


def motion_jacobian(s, cfg: ScenarioConfig) -> np.ndarray:
    return kern.motion_jacobian(_as_vec(s), cfg.speed, cfg.turn_rate)


def motion_sample(s: SensorState, cfg: ScenarioConfig, rng: np.random.Generator) -> SensorState:
    mean = kern.motion_mean(_as_vec(s), cfg.speed, cfg.turn_rate)
    if not np.any(cfg.Q):
        return SensorState.from_vector(mean)
    noise = rng.multivariate_normal(np.zeros(5), cfg.Q, method="eigh")
    return SensorState.from_vector(mean + noise)


def dead_reckon(cfg: ScenarioConfig, K: int | None = None) -> np.ndarray:
    """Noise-free trajectory from the prior mean, ``(K+1, 5)``."""
    K = cfg.K if K is None else K
    traj = np.empty((K + 1, 5))
    traj[0] = cfg.s0_prior.mean
    for k in range(1, K + 1):
        traj[k] = kern.motion_mean(traj[k - 1], cfg.speed, cfg.turn_rate)
    return traj


def dead_reckon_cov(cfg: ScenarioConfig, traj: np.ndarray | None = None) -> np.ndarray:
    """Prior covariance of every state along a trajectory, ``(K+1, 5, 5)``,
    propagated through the linearised motion model."""
    traj = dead_reckon(cfg) if traj is None else np.asarray(traj, dtype=float)
    out = np.empty((traj.shape[0], 5, 5))
    out[0] = cfg.s0_prior.cov
    for k in range(1, traj.shape[0]):
        F = kern.motion_jacobian(traj[k - 1], cfg.speed, cfg.turn_rate)
        out[k] = F @ out[k - 1] @ F.T + cfg.Q
    return out


def measurement_mean(x, s, cfg: ScenarioConfig) -> np.ndarray:
    z = kern.measure(np.asarray(x, dtype=float), _as_vec(s), cfg.bs_position)
    if np.isnan(z[0]):
        raise GeometryError("landmark coincides with the BS or UE (or lies vertically above/below one)")
    return z


def measurement_jacobians(x, s, cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(H_L, H_S)``, the 5x3 landmark and 5x5 sensor Jacobians."""
    x = np.asarray(x, dtype=float)
    sv = _as_vec(s)
    measurement_mean(x, sv, cfg)
    return kern.landmark_jacobian(x, sv, cfg.bs_position), kern.sensor_jacobian(x, sv, cfg.bs_position)


def detection_prob(x, s, cfg: ScenarioConfig) -> float:
    pos = _as_vec(s)[:3]
    return cfg.pd if np.linalg.norm(np.asarray(x, dtype=float) - pos) <= cfg.fov_radius else 0.0


def inverse_measurement(z, s, cfg: ScenarioConfig) -> GaussianDensity:
    """Landmark Gaussian whose mean back-projects ``z``.

    The AOA pair gives a ray from the UE; the distance along it solves the
    bistatic ellipse ``|bs - x| + d = range - B``. The covariance is the
    configured ``birth_cov``.
    """
    x, _, feasible = kern.back_project(np.asarray(z, dtype=float), _as_vec(s), cfg.bs_position)
    if not feasible:
        raise InfeasibleMeasurement("bistatic range shorter than the BS-UE distance plus clock bias")
    return GaussianDensity(x, cfg.birth_cov.copy())


def trajectory_states(traj: np.ndarray) -> list[SensorState]:
    return [SensorState.from_vector(v) for v in np.asarray(traj)]


def as_trajectory(traj: Sequence[SensorState] | np.ndarray) -> np.ndarray:
    if isinstance(traj, np.ndarray):
        return np.asarray(traj, dtype=float)
    return np.array([_as_vec(s) for s in traj])
