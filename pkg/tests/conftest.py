import numpy as np
import pytest

from levy_hjm.hjm_drift import VolatilityField, decay_component
from levy_hjm.levy_driver import Atom, GaussianCluster, LevyTriplet
from levy_hjm.weight_space import MaturityGrid, WeightFunction


@pytest.fixture
def grid():
    return MaturityGrid.from_span(8.0, 1025)


@pytest.fixture
def weight(grid):
    return WeightFunction.exponential(1.0, grid.x_max)


@pytest.fixture
def vol(grid):
    return VolatilityField(grid, decay_component(grid, 0.1, 1.0)[None])


@pytest.fixture
def mixed():
    """Brownian R0 = 0.5 with atoms at +-1 of mass 0.5 (the martingale-run driver)."""
    return LevyTriplet(np.zeros(1), np.array([[0.5]]),
                       (Atom(np.array([1.0]), 0.5), Atom(np.array([-1.0]), 0.5)))


@pytest.fixture
def full2d():
    """Two-dimensional driver with every ingredient: drift, correlated Gaussian part, atoms and a cluster."""
    return LevyTriplet(np.array([0.01, -0.02]), np.array([[0.5, 0.1], [0.1, 0.3]]),
                       (Atom(np.array([1.5, 0.0]), 0.3), Atom(np.array([-0.4, 0.2]), 0.6),
                        GaussianCluster(0.7, np.array([0.4, -0.1]), np.array([[0.3, 0.05], [0.05, 0.2]]))))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and print it immediately."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
