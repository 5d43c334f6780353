import numpy as np
import pytest
from hypothesis import settings

from rdmc.fields import SpeciesSystem, Waveform, make_grid

settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


@pytest.fixture
def first_set():
    """1D channel with an A release at the origin and a B release 100 um away."""
    sys_ = SpeciesSystem(1, 1e-9, 7e-10, 1e-10, 1e-22)
    grid = make_grid(1, 1.28e-3, 512, 10.0, 1000)
    sources = {
        "A": Waveform.impulses([(0.0, 5e8)], (0.0,)),
        "B": Waveform.impulses([(0.0, 2.4e9)], (1e-4,)),
    }
    return sys_, grid, sources


@pytest.fixture
def second_set(first_set):
    sys_, grid, sources = first_set
    return sys_.with_(d_b=1e-9, d_c=1e-9), grid, sources


@pytest.fixture
def uniform_unit():
    """Uniform unit sources of A and B on a periodic box: the ODE a' = 1 - lam a^2."""
    sys_ = SpeciesSystem(1, 1e-3, 1e-3, 1e-3, 0.5)
    grid = make_grid(1, 1.0, 32, 1.0, 100)
    return sys_, grid, {"A": 1.0, "B": 1.0}


def gaussian_bump(grid, center=0.0, width=1.0, height=1.0):
    r2 = grid.radius2(np.full(grid.dim, center))
    return height * np.exp(-r2 / width ** 2)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
