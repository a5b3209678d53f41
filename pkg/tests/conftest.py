import random

import pytest

from cyber_range.topology import default_topology

# Acceptance outcomes, collected by test_acceptance and printed once at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def net():
    return default_topology()


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
