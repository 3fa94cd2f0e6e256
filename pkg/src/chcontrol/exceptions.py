"""Exception hierarchy shared by the solver, adjoint and optimizer."""


class CHControlError(Exception):
    """Base class for all package errors."""


class InvalidMeshError(CHControlError, ValueError):
    pass


class MeanViolationError(CHControlError, ValueError):
    """Raised when a field handed to the Neumann solver is not mean-free."""

    def __init__(self, mean):
        super().__init__(f"field must have zero mean, got mean={mean:.3e}")
        self.mean = mean


class LinearSolverError(CHControlError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DomainViolationError(CHControlError, ValueError):
    """Raised when a potential is evaluated outside its open domain."""


class DomainMismatchError(CHControlError, ValueError):
    pass


class StepFailureError(CHControlError, RuntimeError):
    """Newton failed to converge during a forward time step."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class AdjointStepError(CHControlError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InfeasibleError(CHControlError, ValueError):
    """The admissible control set is empty."""


class ProjectionError(CHControlError, RuntimeError):
    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class ConfigError(CHControlError, ValueError):
    def __init__(self, message, key=None, line=None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.key = key
        self.line = line
