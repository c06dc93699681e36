"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class InclusionError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(InclusionError, ValueError):
    """Invalid user input: malformed config, unsupported dimension, bad parameters."""


class DomainError(InclusionError, ValueError):
    """Evaluation at a point outside the domain of a formula (e.g. the kernel singularity)."""


class GeometryError(InclusionError, ValueError):
    """Invalid surface description (non-positive radial function, bad inclusion)."""


class AccuracyError(InclusionError):
    """A requested evaluation lies outside the regime where the quadrature is accurate."""


class AssemblyError(InclusionError):
    """Operator assembly failed (e.g. duplicate quadrature nodes)."""


class SolverError(InclusionError):
    """A linear solve failed; carries the condition estimate when available."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message if condition is None else f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class ConvergenceError(InclusionError):
    """An iterative solver did not reach its tolerance; carries the partial report."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EvaluationError(InclusionError):
    """A user-supplied evaluator failed or returned non-finite values at a node."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node
