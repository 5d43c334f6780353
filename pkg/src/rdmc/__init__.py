"""Perturbation-series solver for reaction-diffusion channels, with an FDM
oracle, Poisson detection and release-waveform design."""
from .errors import RdmcError
from .fields import Field, Scenario, SpaceTimeGrid, SpeciesSystem, Waveform, make_grid
from .perturb import assemble, solve, solve_series, solve_split
from .fdm import FdmConfig, fdm_solve

__version__ = "0.1.0"

__all__ = [
    "Field", "FdmConfig", "RdmcError", "Scenario", "SpaceTimeGrid", "SpeciesSystem", "Waveform",
    "assemble", "fdm_solve", "make_grid", "solve", "solve_series", "solve_split",
]
