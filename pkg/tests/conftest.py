import math

import numpy as np
import pytest

from combsum import degenerate

ACCEPTANCE_LINES = []

GRID3 = [[1, -1, 0], [-1, 0, 1], [0, 1, -1]]


@pytest.fixture
def grid3():
    return degenerate(GRID3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


SQRT2 = math.sqrt(2.0)
