"""Thermodynamic formalism for nearest-neighbour XY chains on the circle."""
from .potentials import CircleGrid, TwoSitePotential, evaluate, holder_estimate, tabulate
from .transfer import SpectralSolution, build_operator, power_iteration, solve_spectral

__all__ = [
    "CircleGrid",
    "TwoSitePotential",
    "evaluate",
    "tabulate",
    "holder_estimate",
    "SpectralSolution",
    "build_operator",
    "power_iteration",
    "solve_spectral",
]
__version__ = "0.1.0"
