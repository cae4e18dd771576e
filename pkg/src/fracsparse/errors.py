"""Exception types shared across the package."""


class FracsparseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(FracsparseError, ValueError):
    """A scalar argument violates its admissibility constraint."""


class UnsupportedDimensionError(FracsparseError, ValueError):
    """Requested base dimension is not 1 or 2."""


class MeshMismatchError(FracsparseError, ValueError):
    """Two fields live on incompatible meshes."""


class ConfigError(FracsparseError, ValueError):
    """A study configuration file is malformed or violates a constraint."""


class NumericalBreakdownError(FracsparseError, RuntimeError):
    """Non-finite values or loss of positive definiteness inside a solver."""


class OptimalityCheckError(FracsparseError, RuntimeError):
    """A converged triple failed one of the optimality-system checks."""


class ConvergenceError(FracsparseError, RuntimeError):
    """An iteration hit its cap before reaching the requested tolerance.

    Carries the iteration history so callers can inspect the stall.
    """

    def __init__(self, message, history=None, residual=None):
        super().__init__(message)
        self.history = history if history is not None else []
        self.residual = residual
