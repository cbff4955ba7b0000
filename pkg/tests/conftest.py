import numpy as np
import pytest

from pmbm_slam.models import MeasurementBatch, measurement_mean, dead_reckon
from pmbm_slam.scenario import Q_LOW, orbit_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="module")
def cfg():
    """Short orbit with three well separated landmarks."""
    lms = np.array([[30.0, 10.0, 5.0], [45.0, 25.0, 8.0], [25.0, 30.0, 3.0]])
    return orbit_config(5, 1.0, Q_LOW, 0, 1, true_landmarks=lms)


def noiseless_batch(cfg, traj, rows_per_scan):
    """Scans built from exact measurements of ``cfg.true_landmarks``; each
    entry of ``rows_per_scan`` lists the landmark rows observed at that step."""
    scans = []
    for k, rows in enumerate(rows_per_scan, start=1):
        scans.append(np.array([measurement_mean(cfg.true_landmarks[i], traj[k], cfg) for i in rows]).reshape(-1, 5))
    return MeasurementBatch(tuple(scans))


@pytest.fixture(scope="module")
def small_problem(cfg):
    traj = dead_reckon(cfg)
    batch = noiseless_batch(cfg, traj, [[0, 1], [0], [1, 2], [2]])
    return cfg, traj, batch


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
