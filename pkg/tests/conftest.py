import numpy as np
import pytest

from spherecov.fields import default_source_model
from spherecov.kernels import matern_zonal

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def matern():
    return matern_zonal(2.5, 0.4)


@pytest.fixture(scope="session")
def model():
    return default_source_model()


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line for a criterion, then assert it."""

    def record(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
