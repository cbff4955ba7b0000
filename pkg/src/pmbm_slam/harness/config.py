"""Run configuration: strict JSON loading and scenario resolution.

Example::

    {
      "scenario": {"preset": "IV", "scale": "desk", "overrides": {"K": 15}},
      (overrides: K, pd, fov_radius, clutter_rate, speed, turn_rate,
       lambda_rate, R, Q, R_scale, Q_scale, n_landmarks, landmarks)
      "outer_iters": 30,
      "gamma": 10,
      "sweeps_per_da": 1,
      "seed": 1,
      "runs": 5,
      "thresholds": {"r_min": 0.1, "dist_max": 1.0, "r_report": 0.5,
                     "psi_floor": 1e-4, "gate_distance": 30.0, "birth_std": 100.0},
      "sampler": {"moves": "combined", "hastings": true, "max_mh_proposals": null,
                  "da_restart": false, "trajectory_uncertainty": true},
      "output_dir": "out"
    }

Unknown keys anywhere raise :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..association.sampler import MOVES, SamplerOptions
from ..models import ScenarioConfig
from ..scenario import PRESETS, preset

SCENARIO_OVERRIDES = {
    "K", "pd", "fov_radius", "clutter_rate", "speed", "turn_rate", "lambda_rate",
    "R", "Q", "R_scale", "Q_scale", "n_landmarks", "landmarks",
}


class ConfigError(ValueError):
    pass


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


@dataclass(frozen=True)
class Thresholds:
    r_min: float = 0.1
    dist_max: float = 1.0
    r_report: float = 0.5
    psi_floor: float = 1e-4
    gate_distance: float = 30.0
    birth_std: float = 100.0

    def __post_init__(self):
        for name in ("r_min", "r_report"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.psi_floor < 1.0:
            raise ConfigError("psi_floor must lie in [0, 1)")
        if self.dist_max < 0:
            raise ConfigError("dist_max must be non-negative")
        if not self.gate_distance > 0:
            raise ConfigError("gate_distance must be positive")
        if not self.birth_std > 0:
            raise ConfigError("birth_std must be positive")


@dataclass(frozen=True)
class SamplerSettings:
    moves: str = "combined"
    hastings: bool = True
    max_mh_proposals: int | None = None
    da_restart: bool = False
    trajectory_uncertainty: bool = True

    def __post_init__(self):
        if self.moves not in MOVES:
            raise ConfigError(f"moves must be one of {MOVES}")


@dataclass(frozen=True)
class ScenarioSpec:
    preset: str = "IV"
    scale: str = "desk"
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.scale not in ("desk", "full"):
            raise ConfigError("scale must be 'desk' or 'full'")
        _check_keys(self.overrides, SCENARIO_OVERRIDES, "scenario.overrides")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    outer_iters: int = 150
    gamma: int = 100
    sweeps_per_da: int = 1
    seed: int = 0
    runs: int = 1
    thresholds: Thresholds = field(default_factory=Thresholds)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    max_graph_iters: int = 50
    workers: int = 1
    debug_graph: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ConfigError("outer_iters must be at least 1")
        if not 1 <= self.gamma <= self.outer_iters:
            raise ConfigError("gamma must lie in [1, outer_iters]")
        if self.sweeps_per_da < 0:
            raise ConfigError("sweeps_per_da must be non-negative")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.max_graph_iters < 1:
            raise ConfigError("max_graph_iters must be at least 1")

    # -- conversions --------------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d)
        _check_keys(d, {f.name for f in fields(cls)}, "config")
        sc = d.pop("scenario", {})
        if isinstance(sc, str):
            sc = {"preset": sc}
        if not isinstance(sc, dict):
            raise ConfigError("scenario must be a preset name or an object")
        _check_keys(sc, {f.name for f in fields(ScenarioSpec)}, "scenario")
        th = d.pop("thresholds", {})
        _check_keys(th, {f.name for f in fields(Thresholds)}, "thresholds")
        sa = d.pop("sampler", {})
        _check_keys(sa, {f.name for f in fields(SamplerSettings)}, "sampler")
        try:
            return cls(scenario=ScenarioSpec(**sc), thresholds=Thresholds(**th), sampler=SamplerSettings(**sa), **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        for k, v in changes.items():
            if isinstance(v, (ScenarioSpec, Thresholds, SamplerSettings)):
                v = asdict(v)
            d[k] = v
        return RunConfig.from_dict(d)

    # -- resolution ---------------------------------------------------------------
    def scenario_config(self) -> ScenarioConfig:
        ov = dict(self.scenario.overrides)
        r_scale = ov.pop("R_scale", None)
        q_scale = ov.pop("Q_scale", None)
        n_lm = ov.pop("n_landmarks", None)
        for key in ("R", "Q"):
            if key in ov:
                ov[key] = np.asarray(ov[key], dtype=float)
        if "landmarks" in ov:
            ov["true_landmarks"] = np.asarray(ov.pop("landmarks"), dtype=float).reshape(-1, 3)
        std = self.thresholds.birth_std
        base = preset(self.scenario.preset, self.scenario.scale, birth_cov=np.eye(3) * std * std, **ov)
        changes = {}
        if r_scale is not None:
            changes["R"] = base.R * float(r_scale)
        if q_scale is not None:
            changes["Q"] = base.Q * float(q_scale)
        if n_lm is not None:
            changes["true_landmarks"] = base.true_landmarks[: int(n_lm)]
        return base.replace(**changes) if changes else base

    def sampler_options(self) -> SamplerOptions:
        s = self.sampler
        return SamplerOptions(
            moves=s.moves,
            gate_distance=self.thresholds.gate_distance,
            max_mh_proposals=s.max_mh_proposals,
            hastings=s.hastings,
            psi_floor=self.thresholds.psi_floor,
        )


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text, parse_constant=lambda c: math.nan)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    return RunConfig.from_dict(raw)
