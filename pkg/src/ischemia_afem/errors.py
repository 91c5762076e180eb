"""Exception types shared across the package."""


class SolverError(RuntimeError):
    """Base class for numerical failures in the forward or adjoint solves."""


class NewtonDivergedError(SolverError):
    """Damped Newton failed to reduce the residual within its iteration budget."""

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class SingularSystemError(SolverError):
    """A linearized system has no usable factorization (e.g. pure-Neumann limit)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
