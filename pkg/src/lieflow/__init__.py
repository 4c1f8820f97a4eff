"""Spectral Galerkin solver for Landau-Lifshitz type flows valued in Lie algebras."""

__version__ = "0.1.0"

from .lie_algebra import LieAlgebra, builtin, load_algebra, so3, so4, su2, validate_algebra  # noqa: E402
from .spectral_domain import DomainSpec, ModeBasis, build_basis  # noqa: E402
from .galerkin_flow import FlowParams, GalerkinSystem, Trajectory, simulate  # noqa: E402

__all__ = [
    "LieAlgebra", "builtin", "load_algebra", "so3", "su2", "so4", "validate_algebra",
    "DomainSpec", "ModeBasis", "build_basis", "FlowParams", "GalerkinSystem", "Trajectory", "simulate",
]
