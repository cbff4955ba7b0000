"""The outer sampling/optimisation loop and its Monte-Carlo orchestration."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..association.likelihood import CellScorer
from ..association.partition import ExistenceVector, Partition
from ..association.sampler import DAChain
from ..graph import LevenbergOptions, SolverDegenerateError, write_debug_csv
from ..graphslam import GraphSlamResult, build_graph, solve
from ..metrics import GospaBreakdown, gospa, nmi
from ..models import InfeasibleMeasurement, dead_reckon, dead_reckon_cov, wrap_angle
from ..posterior import MergedPosterior, SampleRecord, extract_map_estimate, merge_posterior
from ..rfs import NumericError
from ..scenario import GroundTruth, generate_scenario
from .config import RunConfig

log = logging.getLogger(__name__)

RECOVERABLE = (SolverDegenerateError, InfeasibleMeasurement, NumericError, np.linalg.LinAlgError, FloatingPointError)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    n_cells: int
    n_landmarks: int
    cost: float
    nmi: float
    gospa: float
    failed: bool = False


@dataclass(eq=False)
class RunReport:
    run: int
    seed: tuple[int, int]
    truth: GroundTruth
    posterior: MergedPosterior | None
    final_partition: Partition
    iterations: list[IterationRecord]
    failures: list[tuple[int, str]]
    n_samples: int
    nmi_final: float
    nmi_tail: float
    position_error: np.ndarray  # (K+1,) Euclidean error of the merged mean
    heading_error: np.ndarray
    bias_error: np.ndarray
    gospa: GospaBreakdown | None
    n_measurements: int
    wall_clock: float
    config_echo: str = ""
    last_result: GraphSlamResult | None = None
    sampler_stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.posterior is not None

    @property
    def position_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.position_error**2)))

    @property
    def heading_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.heading_error**2)))

    @property
    def bias_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.bias_error**2)))

    def metrics(self) -> dict[str, tuple[float, str]]:
        """Scalar per-run metrics with their units."""
        nan = float("nan")
        g = self.gospa
        return {
            "nmi_final": (self.nmi_final, "1"),
            "nmi_tail_mean": (self.nmi_tail, "1"),
            "position_rmse": (self.position_rmse if self.ok else nan, "m"),
            "heading_rmse": (self.heading_rmse if self.ok else nan, "rad"),
            "bias_rmse": (self.bias_rmse if self.ok else nan, "m"),
            "gospa": (g.total if g else nan, "m"),
            "gospa_localization": (g.localization if g else nan, "m"),
            "gospa_missed": (g.missed if g else nan, "m"),
            "gospa_false": (g.false_alarm if g else nan, "m"),
            "n_estimated_landmarks": (float(g.n_false + len(self.truth.landmarks) - g.n_missed) if g else nan, "count"),
            "n_samples": (float(self.n_samples), "count"),
            "n_failures": (float(len(self.failures)), "count"),
            "n_measurements": (float(self.n_measurements), "count"),
        }


def run_seed(base_seed: int, run: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent scenario and algorithm streams for one run, derived from
    ``(base_seed, run)`` only, so results do not depend on scheduling."""
    scen, algo = np.random.SeedSequence([int(base_seed), int(run)]).spawn(2)
    return np.random.default_rng(scen), np.random.default_rng(algo)


def run_once(cfg: RunConfig, seed: int | None = None, run: int = 0, debug_dir=None) -> RunReport:
    """One complete estimation run on a freshly generated scenario."""
    t0 = time.perf_counter()
    base = cfg.seed if seed is None else seed
    scen_rng, rng = run_seed(base, run)
    scfg = cfg.scenario_config()
    truth, batch = generate_scenario(scfg, scen_rng)
    options = cfg.sampler_options()
    lm_opts = LevenbergOptions(max_iters=cfg.max_graph_iters)
    use_cov = cfg.sampler.trajectory_uncertainty

    traj = dead_reckon(scfg)
    traj_cov = dead_reckon_cov(scfg) if use_cov else None
    masks = None
    landmark_init: dict = {}
    records: list[SampleRecord] = []
    iters: list[IterationRecord] = []
    failures: list[tuple[int, str]] = []
    tail_start = cfg.outer_iters - cfg.gamma
    chain = None
    p = Partition.from_masks(batch, [1 << i for i in range(len(batch))])
    last_result = None
    stats: dict[str, int] = {}

    for it in range(cfg.outer_iters):
        try:
            scorer = CellScorer(batch, traj, scfg, traj_cov)
            if masks is None or cfg.sampler.da_restart:
                chain = DAChain.singletons(scorer, options)
            else:
                chain = DAChain(scorer, masks, options)
            chain.run(cfg.sweeps_per_da, rng)
            for key, val in chain.stats.items():
                stats[key] = stats.get(key, 0) + val
            cell_masks, flags = chain.sample_existence(rng)
            p = Partition.from_masks(batch, cell_masks)
            psi = ExistenceVector(tuple(flags))
            prob = build_graph(p, psi, traj, batch, scfg)
            res = solve(prob, prob.initial_state(traj, landmark_init), lm_opts)
        except RECOVERABLE as exc:
            log.warning("run %d iteration %d failed: %s", run, it, exc)
            failures.append((it, f"{type(exc).__name__}: {exc}"))
            iters.append(IterationRecord(it, len(p.cells), 0, float("nan"), nmi(p, truth.associations), float("nan"), True))
            if chain is not None:
                masks = list(chain.masks)
            continue
        masks = list(chain.masks)
        traj = res.traj_mean
        if use_cov:
            traj_cov = res.step_covariances
        landmark_init = {m: x for m, x in zip(res.cell_first_indices, res.map_mean)}
        last_result = res
        g = gospa(truth.landmarks, res.map_mean).total
        iters.append(IterationRecord(it, len(p.cells), len(res.cell_first_indices), res.final_cost,
                                     nmi(p, truth.associations), g))
        if it >= tail_start:
            records.append(SampleRecord(p, psi, res))

    if debug_dir is not None and last_result is not None:
        write_debug_csv(debug_dir, last_result.omega, last_result.cost_trace)

    tail_nmi = [r.nmi for r in iters[tail_start:] if not r.failed]
    posterior = None
    g = None
    pos_err = head_err = bias_err = np.full(scfg.K + 1, np.nan)
    if records:
        posterior = merge_posterior(records, scfg, cfg.thresholds.r_min, cfg.thresholds.dist_max)
        est = posterior.traj_mean
        T = truth.trajectory
        pos_err = np.linalg.norm(est[:, :3] - T[:, :3], axis=1)
        head_err = np.abs(wrap_angle(est[:, 3] - T[:, 3]))
        bias_err = np.abs(est[:, 4] - T[:, 4])
        g = gospa(truth.landmarks, extract_map_estimate(posterior.map, cfg.thresholds.r_report))
    return RunReport(
        run=run,
        seed=(int(base), int(run)),
        truth=truth,
        posterior=posterior,
        final_partition=p,
        iterations=iters,
        failures=failures,
        n_samples=len(records),
        nmi_final=nmi(p, truth.associations),
        nmi_tail=float(np.mean(tail_nmi)) if tail_nmi else float("nan"),
        position_error=pos_err,
        heading_error=head_err,
        bias_error=bias_err,
        gospa=g,
        n_measurements=len(batch),
        wall_clock=time.perf_counter() - t0,
        config_echo=cfg.to_json(),
        last_result=last_result,
        sampler_stats=stats,
    )


@dataclass(eq=False)
class MonteCarloReport:
    config: RunConfig
    runs: list[RunReport]

    @property
    def successful(self) -> list[RunReport]:
        return [r for r in self.runs if r.ok]

    def rmse_per_step(self, which: str = "position") -> np.ndarray:
        """Per-step RMSE over the successful runs."""
        errs = np.array([getattr(r, f"{which}_error") for r in self.successful])
        return np.sqrt(np.mean(errs**2, axis=0))

    def aggregate(self) -> dict[str, float]:
        ok = self.successful
        out = {"runs": float(len(self.runs)), "successful_runs": float(len(ok))}
        if not ok:
            return out
        for which in ("position", "heading", "bias"):
            errs = np.array([getattr(r, f"{which}_error") for r in ok])
            out[f"{which}_rmse"] = float(np.sqrt(np.mean(errs**2)))
        out["nmi_final_mean"] = float(np.mean([r.nmi_final for r in ok]))
        out["nmi_tail_mean"] = float(np.mean([r.nmi_tail for r in ok]))
        out["gospa_mean"] = float(np.mean([r.gospa.total for r in ok]))
        return out


def _run_job(args) -> RunReport:
    cfg, run = args
    return run_once(cfg, cfg.seed, run)


def run_monte_carlo(cfg: RunConfig, runs: int | None = None, workers: int | None = None) -> MonteCarloReport:
    """Independent runs ``0..runs-1``; each draws its streams from
    ``(cfg.seed, run)``, so serial and parallel execution agree exactly."""
    n = cfg.runs if runs is None else runs
    w = cfg.workers if workers is None else workers
    jobs = [(cfg, i) for i in range(n)]
    if w > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=w) as pool:
            reports = list(pool.map(_run_job, jobs))
    else:
        reports = [_run_job(j) for j in jobs]
    return MonteCarloReport(cfg, reports)
