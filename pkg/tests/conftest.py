import math

import pytest

from cv2x.analysis import Model
from cv2x.channel import NetworkConfig
from cv2x.simulator import SimulationOptions, run_monte_carlo

REFERENCE_DROPS = 100_000
REFERENCE_SEED = 20240

# filled by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def record(label: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_los() -> NetworkConfig:
    """LOS system parameters with the sparse-road density lambda_l = 1/pi."""
    return NetworkConfig.for_scenario("LOS", lambda_l=1.0 / math.pi)


@pytest.fixture(scope="session")
def reference_nlos() -> NetworkConfig:
    return NetworkConfig.for_scenario("NLOS", lambda_l=1.0 / math.pi)


@pytest.fixture(scope="session")
def reference_run(reference_los):
    """Typical-vehicle Monte Carlo at the LOS reference point, shared by the slow checks."""
    return run_monte_carlo(reference_los, REFERENCE_DROPS, REFERENCE_SEED,
                           SimulationOptions(thresholds_db=(0.0,)))


@pytest.fixture(scope="session")
def reference_model(reference_los) -> Model:
    return Model(reference_los)
