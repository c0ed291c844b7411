import time

import numpy as np
import pytest

from cloudlogit.trainer import BlobSpec, TrainConfig, baseline_config, run_experiment

SEEDS = range(5)
ACCEPTANCE_LINES: list[str] = []
TIMINGS: dict[str, float] = {}


def record(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def experiment_configs(seed: int):
    data = BlobSpec(num_classes=10, dim=32, n0=500, gamma=100.0, test_per_class=200, seed=seed)
    gcl = TrainConfig(stage1_iters=3000, stage2_iters=500, lr=0.1, momentum=0.9, batch_size=64,
                      hidden=(64, 64), embedding_dim=16, seed=seed)
    base = baseline_config(stage1_iters=3000, lr=0.1, momentum=0.9, batch_size=64,
                           hidden=(64, 64), embedding_dim=16, seed=seed)
    return gcl, base, data


@pytest.fixture(scope="session")
def paired_runs():
    """The desk-scale paired experiment, one entry per seed (shared by several tests)."""
    t0 = time.perf_counter()
    out = [run_experiment(*experiment_configs(seed)) for seed in SEEDS]
    TIMINGS["paired_runs"] = time.perf_counter() - t0
    return out


def median(values):
    return float(np.median(values))
