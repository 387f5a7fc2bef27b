import numpy as np
import pytest
import torch

from csi_llm.channel_data import ScenarioConfig, generate_synthetic_dataset
from csi_llm.config import ci_config

torch.set_num_threads(4)

_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    if not _acceptance_outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid in sorted(_acceptance_outcomes):
        name = nodeid.split("::")[-1]
        outcome = _acceptance_outcomes[nodeid]
        terminalreporter.write_line(f"{name}: {'PASS' if outcome == 'passed' else outcome.upper()}")


@pytest.fixture(scope="session")
def ci_cfg():
    return ci_config()


@pytest.fixture(scope="session")
def ci_scenario(ci_cfg):
    return ci_cfg.scenario


@pytest.fixture(scope="session")
def small_dataset(ci_scenario):
    """60 samples at the ci scenario; enough for shape/metric tests."""
    return generate_synthetic_dataset(ci_scenario, 60)


def tiny_scenario(**overrides) -> ScenarioConfig:
    """Very small geometry for fast unit tests."""
    base = dict(speed_kmh=30.0, n_steps=20, n_tx=2, n_rx=2, n_prb=2, n_paths=4, seed=3)
    base.update(overrides)
    return ScenarioConfig(**base)


def rand_step(rng: np.random.Generator, shape=(2, 2, 2, 2)) -> np.ndarray:
    return rng.standard_normal(shape).astype(np.float32)
