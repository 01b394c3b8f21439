"""Exception types shared across the package."""


class HybridFEError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HybridFEError, ValueError):
    """An argument violates a documented precondition."""


class MeshFormatError(HybridFEError, ValueError):
    """Mesh file is malformed or describes an invalid triangulation."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedDegreeError(HybridFEError, ValueError):
    """Polynomial degree outside the supported range."""


class UnsupportedOrderError(HybridFEError, ValueError):
    """Quadrature order outside the supported range."""


class CoefficientError(HybridFEError, ValueError):
    """Diffusion coefficient failed a positivity/symmetry check."""


class ConfigError(HybridFEError, ValueError):
    """Method configuration violates a variant's space or stabilization table."""


class SingularSystemError(HybridFEError, RuntimeError):
    """Factorization found the system singular to working precision."""


class AccuracyError(HybridFEError, RuntimeError):
    """Direct solve finished but the residual exceeds the tolerance."""


class IncomparableLayoutError(HybridFEError, ValueError):
    """Two solutions do not share a DOF layout and cannot be compared."""
