"""Command-line entry point ``slam``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ..fixtures import FIXTURES, make_fixture, oracle_check
from .config import ConfigError, RunConfig, ScenarioSpec, load_config
from .outputs import write_all
from .runner import run_monte_carlo

TV_LIMIT = 0.05


def _load(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_run(args) -> int:
    cfg = _load(args.config)
    changes = {}
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.preset is not None:
        sc = cfg.scenario
        changes["scenario"] = ScenarioSpec(args.preset, sc.scale, dict(sc.overrides))
    if changes:
        cfg = cfg.replace(**changes)
    out = args.out or cfg.output_dir or "slam-out"
    report = run_monte_carlo(cfg)
    paths = write_all(report, out)
    for key, val in report.aggregate().items():
        print(f"{key:>18s}  {val:.6g}")
    print(f"outputs written to {Path(out).resolve()} ({', '.join(p.name for p in paths.values())})")
    return 0 if report.successful else 1


def cmd_enumerate_check(args) -> int:
    cfg = _load(args.config)
    options = cfg.sampler_options()
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for name in FIXTURES:
        res = oracle_check(make_fixture(name), args.samples, rng, options)
        worst = max(worst, res.tv)
        flag = "PASS" if res.tv <= TV_LIMIT else "FAIL"
        print(f"{flag}  {name:<14s} partitions={res.n_partitions:<4d} TV={res.tv:.4f}  ({res.seconds:.1f} s)")
    return 0 if worst <= TV_LIMIT else 1


def _read_columns(path: Path, key: str, cols: list[str]) -> dict[int, list[list[float]]]:
    series: dict[int, list[list[float]]] = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            series.setdefault(int(row[key]), []).append([float(row[c]) for c in cols])
    return series


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(args.input)
    dst = Path(args.out) if args.out else src
    dst.mkdir(parents=True, exist_ok=True)

    cols = ["position_error_m", "heading_error_rad", "bias_error_m"]
    by_step = _read_columns(src / "steps.csv", "k", cols)
    steps = sorted(by_step)
    rmse = np.array([np.sqrt(np.mean(np.square(by_step[k]), axis=0)) for k in steps])
    with (dst / "rmse_per_step.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "position_rmse_m", "heading_rmse_rad", "bias_rmse_m"])
        for k, row in zip(steps, rmse):
            w.writerow([k] + [repr(float(v)) for v in row])
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    for ax, col, label in zip(axes, rmse.T, ("position RMSE [m]", "heading RMSE [rad]", "bias RMSE [m]")):
        ax.plot(steps, col, marker="o", ms=3)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("time step k")
    fig.tight_layout()
    fig.savefig(dst / "rmse_per_step.svg")
    plt.close(fig)

    by_iter = _read_columns(src / "iterations.csv", "iteration", ["gospa_m", "nmi_1"])
    iters = sorted(by_iter)
    mean = np.array([np.nanmean(by_iter[i], axis=0) for i in iters])
    with (dst / "gospa_per_iteration.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "mean_gospa_m", "mean_nmi_1"])
        for i, row in zip(iters, mean):
            w.writerow([i] + [repr(float(v)) for v in row])
    fig, axes = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    axes[0].plot(iters, mean[:, 0])
    axes[0].set_ylabel("mean GOSPA [m]")
    axes[1].plot(iters, mean[:, 1])
    axes[1].set_ylabel("mean NMI")
    axes[1].set_xlabel("outer iteration")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(dst / "gospa_per_iteration.svg")
    plt.close(fig)
    print(f"plots written to {dst.resolve()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slam", description="Sampling-based PMBM SLAM simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run Monte-Carlo simulations")
    run.add_argument("--config", type=Path)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--preset", choices=["I", "II", "III", "IV"])
    run.add_argument("--workers", type=int)
    run.add_argument("--out", type=Path)
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("enumerate-check", help="compare the sampler with exact enumeration on small fixtures")
    chk.add_argument("--config", type=Path)
    chk.add_argument("--samples", type=int, default=100_000)
    chk.set_defaults(func=cmd_enumerate_check)

    plot = sub.add_parser("plot", help="per-step RMSE and per-iteration GOSPA curves")
    plot.add_argument("--in", dest="input", type=Path, required=True)
    plot.add_argument("--out", type=Path)
    plot.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
