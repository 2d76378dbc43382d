import pytest

from wpecho.grid import Grid
from wpecho.lattice import LatticeParams
from wpecho.spectral import solve_eigensystem

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def grid():
    return Grid()


@pytest.fixture(scope="session")
def lattice():
    return LatticeParams()


@pytest.fixture(scope="session")
def eigensystem(grid, lattice):
    return solve_eigensystem(lattice, 0.0, grid)


@pytest.fixture(scope="session")
def shifted_eigensystem(grid, lattice):
    return solve_eigensystem(lattice, lattice.shift, grid)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail
    return record
