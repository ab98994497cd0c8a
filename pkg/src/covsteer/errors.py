"""Exception hierarchy shared by every covsteer module."""


class CovsteerError(Exception):
    """Base class for all library errors."""


class ModelValidationError(CovsteerError, ValueError):
    """Raised when a system, noise model or problem violates its invariants."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OutOfScopeError(ModelValidationError):
    """Raised for inputs the method does not cover (e.g. singular Sigma0 with n > 1)."""


class DerivativeOrderError(ModelValidationError):
    def __init__(self, name, required, available):
        super().__init__(
            f"schedule {name} needs {required} time derivative(s), "
            f"only {available} available"
        )
        self.required = required
        self.available = available


class NumericalError(CovsteerError):
    """Integrator or quadrature failure."""


class FiniteEscapeError(CovsteerError):
    """The Riccati solution blows up before the requested time."""

    def __init__(self, message, escape_time):
        super().__init__(message)
        self.escape_time = escape_time


class DomainError(CovsteerError, ValueError):
    """Pi0 lies outside the feasible set {Pi0 < N(1,0)^-1}."""


class KernelMismatchError(CovsteerError, ValueError):
    """Closed-form solve requested but C D C^T differs from B R^-1 B^T."""


class SolverError(CovsteerError):
    """Newton / homotopy failed to converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InfeasibleProblemError(CovsteerError, ValueError):
    """Terminal covariance unreachable (1-D singular start with sigma1 >= eta)."""


class SimulationError(CovsteerError):
    pass
