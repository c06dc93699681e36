"""Nonlinear transmission problem in a domain with a small inclusion.

Boundary-integral reformulation, Newton and Picard solvers, solution families
in the inclusion size ``eps`` and empirical local-uniqueness probes.
"""

from .config import RunConfig, build_problem, load_config, parse_config
from .errors import (
    AccuracyError,
    AssemblyError,
    ConfigurationError,
    ConvergenceError,
    DomainError,
    EvaluationError,
    GeometryError,
    InclusionError,
    SolverError,
)
from .geometry import SurfaceSpec, build_quadrature, check_inclusion

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "SurfaceSpec",
    "build_problem",
    "build_quadrature",
    "check_inclusion",
    "load_config",
    "parse_config",
    "InclusionError",
    "ConfigurationError",
    "DomainError",
    "GeometryError",
    "AccuracyError",
    "AssemblyError",
    "SolverError",
    "ConvergenceError",
    "EvaluationError",
]
