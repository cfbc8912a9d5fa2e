import numpy as np
import pytest

from fsidelay.cli import Pipeline
from fsidelay.config import build_config


@pytest.fixture(scope="session")
def default_pipe():
    """Pipeline of the default configuration, shared across tests."""
    return Pipeline(build_config({}))


@pytest.fixture(scope="session")
def small_pipe():
    """Coarse pipeline for fast structural tests."""
    return Pipeline(build_config({"geometry": {"n_modes": 8, "n_vertical": 10}}))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


def record_criterion(number, name, passed, detail):
    """Store the outcome of one acceptance criterion for the terminal summary."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'} {name}: {detail}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
