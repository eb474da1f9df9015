import numpy as np
import pytest

from scatsep.transforms.filterbank import design_filterbank

SR = 16000


@pytest.fixture(scope="session")
def fb():
    return design_filterbank()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary so that
# the verdicts are visible even when test output is captured
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
