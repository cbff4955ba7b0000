import json

import numpy as np
import pytest

from pmbm_slam.graph import SolverDegenerateError
from pmbm_slam.harness import runner
from pmbm_slam.harness.cli import main
from pmbm_slam.harness.config import ConfigError, RunConfig, load_config
from pmbm_slam.harness.outputs import read_runs_csv, write_all
from pmbm_slam.harness.runner import MonteCarloReport, run_monte_carlo, run_once

SMALL = {"scenario": {"preset": "I", "overrides": {"K": 6}}, "outer_iters": 4, "gamma": 2, "seed": 5}


def small(**changes):
    return RunConfig.from_dict({**SMALL, **changes})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"outer_iter": 3})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"sampler": {"move": "gibbs"}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"scenario": {"preset": "I", "overrides": {"pD": 0.5}}})


@pytest.mark.parametrize("bad", [
    {"outer_iters": 5, "gamma": 6},
    {"thresholds": {"r_min": 1.5}},
    {"thresholds": {"gate_distance": 0.0}},
    {"sampler": {"moves": "random"}},
    {"scenario": "V"},
    {"runs": 0},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_round_trip_and_file(tmp_path):
    cfg = small(thresholds={"r_min": 0.2}, sampler={"moves": "gibbs"})
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    sc = cfg.scenario_config()
    assert sc.K == 6 and sc.clutter_rate == 1.0


def test_single_iteration_is_single_result():
    rep = run_once(small(outer_iters=1, gamma=1))
    assert rep.n_samples == 1 and len(rep.iterations) == 1
    res = rep.last_result
    np.testing.assert_array_equal(rep.posterior.traj_mean, res.traj_mean)
    np.testing.assert_array_equal(rep.posterior.traj.cov, res.traj_cov)
    assert len(rep.posterior.map) <= len(res.landmarks)
    assert all(c.r == 1.0 for c in rep.posterior.map.components)


def test_report_contents_and_determinism():
    cfg = small()
    a, b = run_once(cfg), run_once(cfg)
    assert a.metrics() == b.metrics()
    assert a.final_partition == b.final_partition
    assert a.config_echo == cfg.to_json()
    assert a.n_samples == cfg.gamma
    assert all(np.isfinite(v) for v, _ in a.metrics().values())
    assert len(a.iterations) == cfg.outer_iters


def test_failed_iteration_does_not_abort(monkeypatch):
    calls = {"n": 0}
    real = runner.solve

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise SolverDegenerateError("forced")
        return real(*args, **kwargs)

    monkeypatch.setattr(runner, "solve", flaky)
    rep = run_once(small())
    assert [it for it, _ in rep.failures] == [1]
    assert rep.iterations[1].failed
    assert rep.ok and rep.n_samples == 2


def test_monte_carlo_aggregation(tmp_path):
    cfg = small(runs=3)
    mc = run_monte_carlo(cfg)
    single = run_once(cfg, cfg.seed, 0)
    one = MonteCarloReport(cfg, [single])
    assert one.aggregate()["position_rmse"] == single.position_rmse
    assert one.aggregate()["gospa_mean"] == single.gospa.total
    paths = write_all(mc, tmp_path)
    per_run = read_runs_csv(paths["runs"])
    agg = mc.aggregate()
    assert agg["position_rmse"] == pytest.approx(np.sqrt(np.mean(per_run["position_rmse"] ** 2)), rel=1e-12)
    assert agg["gospa_mean"] == pytest.approx(per_run["gospa"].mean(), rel=1e-12)
    flipped = MonteCarloReport(cfg, mc.runs[::-1]).aggregate()
    assert flipped == pytest.approx(agg, rel=1e-12)


def test_output_files(tmp_path):
    mc = run_monte_carlo(small(runs=2))
    write_all(mc, tmp_path)
    header = (tmp_path / "runs.csv").read_text().splitlines()[0]
    assert header == "run,base_seed,metric,unit,value"
    assert "mean_x_m" in (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    payload = json.loads((tmp_path / "merged_map.json").read_text())
    assert payload["units"]["u"] == "m"
    assert len(payload["runs"]) == 2
    assert all({"r", "u", "C"} <= set(c) for c in payload["runs"][0]["components"])
    assert payload["runs"][0]["undetected_expected_count"] > 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"] == mc.config.to_dict()


def test_cli_run_and_plot(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--runs", "2", "--seed", "9", "--preset", "II", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 9 and summary["config"]["scenario"]["preset"] == "II"
    assert main(["plot", "--in", str(out)]) == 0
    for name in ("rmse_per_step.svg", "rmse_per_step.csv", "gospa_per_iteration.svg", "gospa_per_iteration.csv"):
        assert (out / name).stat().st_size > 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert main(["run", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_enumerate_check(capsys):
    main(["enumerate-check", "--samples", "3000"])
    lines = [ln for ln in capsys.readouterr().out.splitlines() if "TV=" in ln]
    assert len(lines) == 3
