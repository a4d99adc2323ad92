"""Exception types shared by the numerical modules and the CLI."""


class SurfNSError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigurationError(SurfNSError, ValueError):
    """Invalid parameters. Carries every violation that was found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UsageError(SurfNSError, ValueError):
    """A field used with the wrong grid, or an operation with the wrong backend."""


class PreconditionError(SurfNSError, ValueError):
    """Input violates a solvability condition (e.g. Poisson source with nonzero mean)."""


class SolverError(SurfNSError, RuntimeError):
    """Iterative solver did not converge."""

    exit_code = 2

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergenceError(SolverError):
    """Time integration produced non-finite values."""


class ConsistencyError(SurfNSError, RuntimeError):
    """A residual that should be a weighted gradient is not one."""

    exit_code = 3

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect
