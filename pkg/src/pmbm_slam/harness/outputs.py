"""Serialisation of Monte-Carlo results.

Everything except ``summary.json`` is a pure function of (config, seed), so
repeated executions write byte-identical files. Wall-clock times live only
in the summary.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .runner import MonteCarloReport

TRAJ_COLUMNS = ("x_m", "y_m", "z_m", "heading_rad", "bias_m")


def _f(x: float) -> str:
    return repr(float(x))


def write_runs_csv(report: MonteCarloReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "base_seed", "metric", "unit", "value"])
        for r in report.runs:
            for name, (value, unit) in r.metrics().items():
                w.writerow([r.run, r.seed[0], name, unit, _f(value)])
    return path


def write_trajectory_csv(report: MonteCarloReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "k"] + [f"mean_{c}" for c in TRAJ_COLUMNS] + [f"std_{c}" for c in TRAJ_COLUMNS]
                   + [f"true_{c}" for c in TRAJ_COLUMNS])
        for r in report.successful:
            mean, std, truth = r.posterior.traj_mean, r.posterior.traj_std, r.truth.trajectory
            for k in range(mean.shape[0]):
                w.writerow([r.run, k] + [_f(v) for v in mean[k]] + [_f(v) for v in std[k]] + [_f(v) for v in truth[k]])
    return path


def write_steps_csv(report: MonteCarloReport, path) -> Path:
    """Per-run, per-step errors of the merged trajectory mean."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "k", "position_error_m", "heading_error_rad", "bias_error_m"])
        for r in report.successful:
            for k, (a, b, c) in enumerate(zip(r.position_error, r.heading_error, r.bias_error)):
                w.writerow([r.run, k, _f(a), _f(b), _f(c)])
    return path


def write_iterations_csv(report: MonteCarloReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "iteration", "n_cells", "n_landmarks", "cost_1", "nmi_1", "gospa_m", "failed"])
        for r in report.runs:
            for it in r.iterations:
                w.writerow([r.run, it.iteration, it.n_cells, it.n_landmarks, _f(it.cost), _f(it.nmi),
                            _f(it.gospa), int(it.failed)])
    return path


def merged_map_payload(report: MonteCarloReport) -> dict:
    runs = []
    for r in report.successful:
        comps = [{"r": float(c.r), "u": c.density.mean.tolist(), "C": c.density.cov.tolist()}
                 for c in r.posterior.map.components]
        runs.append({
            "run": r.run,
            "components": comps,
            "undetected_expected_count": float(r.posterior.undetected.expected_count()),
        })
    return {"units": {"r": "probability", "u": "m", "C": "m^2", "undetected_expected_count": "landmarks"},
            "runs": runs}


def write_merged_map_json(report: MonteCarloReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(merged_map_payload(report), indent=1) + "\n")
    return path


def write_summary_json(report: MonteCarloReport, path) -> Path:
    path = Path(path)
    agg = report.aggregate()
    payload = {
        "config": report.config.to_dict(),
        "aggregate": agg,
        "failures": {str(r.run): r.failures for r in report.runs if r.failures},
        "wall_clock_s": [r.wall_clock for r in report.runs],
    }
    path.write_text(json.dumps(payload, indent=1, default=float) + "\n")
    return path


def write_all(report: MonteCarloReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "runs": write_runs_csv(report, out / "runs.csv"),
        "trajectory": write_trajectory_csv(report, out / "trajectory.csv"),
        "steps": write_steps_csv(report, out / "steps.csv"),
        "iterations": write_iterations_csv(report, out / "iterations.csv"),
        "merged_map": write_merged_map_json(report, out / "merged_map.json"),
        "summary": write_summary_json(report, out / "summary.json"),
    }


def read_runs_csv(path) -> dict[str, np.ndarray]:
    """Metric name to per-run values (ordered by run)."""
    rows: dict[str, list[tuple[int, float]]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["metric"], []).append((int(row["run"]), float(row["value"])))
    return {m: np.array([v for _, v in sorted(vals)]) for m, vals in rows.items()}
