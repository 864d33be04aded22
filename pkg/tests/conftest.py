import numpy as np
import pytest

from gasgrid.cases import load_case
from gasgrid.gasnet import GasProperties, Pipe


@pytest.fixture
def props():
    return GasProperties()


@pytest.fixture
def long_pipe():
    return Pipe(0, 0, 1, 51000.0, 0.5901, 0.03)


@pytest.fixture
def rupture_case():
    return load_case("single_pipe_rupture")


@pytest.fixture
def cascade_case():
    return load_case("reduced_cascade")


def richardson_slope(hs, errs):
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
