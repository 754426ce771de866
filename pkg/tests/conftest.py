import numpy as np
import pytest


def random_spectrum(rng, p, spread=3.0):
    """Strictly decreasing positive values with random gaps."""
    gaps = rng.exponential(1.0, size=p) + 1e-3
    return np.sort(np.cumsum(gaps) * spread / p)[::-1]


def midpoint_mass(f, a, b, nodes):
    h = (b - a) / nodes
    t = a + h * (np.arange(nodes) + 0.5)
    return h * f(t).sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
