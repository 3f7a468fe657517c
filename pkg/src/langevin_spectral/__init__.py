"""Spectral Galerkin solver for the Poisson equation of the Langevin generator.

Weighted Fourier modes in position and Hermite functions in momentum; the
mean-zero constraint is enforced by a Lagrange multiplier.
"""
from .assembly import GalerkinSystem, build_P, build_Q, build_rigidity, observable_sobolev, observable_velocity
from .model import CoefficientVector, ModelParams, fourier_coefficients_of_one, zeta, zeta_inverse
from .solver import SolveResult, reference_solution, solve_poisson, truncate

__version__ = "0.1.0"

__all__ = [
    "CoefficientVector",
    "GalerkinSystem",
    "ModelParams",
    "SolveResult",
    "build_P",
    "build_Q",
    "build_rigidity",
    "fourier_coefficients_of_one",
    "observable_sobolev",
    "observable_velocity",
    "reference_solution",
    "solve_poisson",
    "truncate",
    "zeta",
    "zeta_inverse",
]
