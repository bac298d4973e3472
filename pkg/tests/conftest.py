import numpy as np
import pytest

from quasidd import fem, partition
from quasidd.precond import quasimode_wavenumber

K03 = quasimode_wavenumber(0, 3, 1.3, 0.4)


@pytest.fixture(scope="session")
def small_geometry():
    """Shrunken domain around the standard cavity."""
    return fem.GeometryParams(L_x=1.0, L_y=0.6, L_pml=0.3, k=K03)


@pytest.fixture(scope="session")
def small_system(small_geometry):
    return fem.build_system(small_geometry, 0.1, 2)


@pytest.fixture(scope="session")
def tiny_system():
    """A few hundred dofs; small enough for dense analysis."""
    g = fem.GeometryParams(L_x=1.0, L_y=0.6, L_pml=0.3, k=K03)
    return fem.build_system(g, 0.1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def decomposed(system, S, layout="strips_x", overlap=1):
    dec = partition.decompose(system.mesh, system.dofmap, S, layout, overlap)
    return dec, partition.build_local_problems(system, dec)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def report(number, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
