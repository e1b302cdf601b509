import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sircontrol.sir_core import Params, State

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def p3():
    """beta = 0.3, gamma = 0.1, with sigma0 = 3 exactly (0.3 / 0.1 rounds below 3)."""
    return Params(0.1, 3.0)


@pytest.fixture
def s_main():
    return State(0.99, 0.01)


@pytest.fixture
def record():
    """Collect one PASS/FAIL line per acceptance criterion for the summary."""

    def _record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
