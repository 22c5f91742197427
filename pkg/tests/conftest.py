from functools import lru_cache

import numpy as np
import pytest

from mfgmarket import scenarios
from mfgmarket.fixed_point import FixedPointOptions, solve_mfg
from mfgmarket.geometry import Grid
from mfgmarket.market import Boundary, derive_params

CORPUS_GRID = Grid(200, 400)
CORPUS_R = 0.5
EPSILONS = (0.0, 1.0, 2.0)
TERMINALS = ("constant", "ramp")

ACCEPTANCE_LINES: list[str] = []


def terminal(name, grid=CORPUS_GRID):
    return scenarios.constant(grid, 0.5) if name == "constant" else scenarios.ramp(grid, 0.25)


@lru_cache(maxsize=None)
def corpus_solve(epsilon, uT, sigma, bc="neumann", nx=200, nt=400, initial_f=None, tol=1e-8):
    """Cached equilibrium on the standard corpus (bump initial density)."""
    grid = Grid(nx, nt)
    params = derive_params(epsilon, CORPUS_R, sigma)
    opts = FixedPointOptions(tol=tol, initial_f=initial_f)
    return solve_mfg(params, scenarios.bump(grid), terminal(uT, grid), grid, Boundary.parse(bc), opts)


@pytest.fixture(scope="session")
def solve_corpus():
    return corpus_solve


@pytest.fixture
def small_grid():
    return Grid(50, 100)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
