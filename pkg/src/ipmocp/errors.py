"""Exception hierarchy shared by the solver layers."""


class IpmOcpError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(IpmOcpError, ValueError):
    """Inconsistent dimensions, parameters or options."""


class EvaluationError(IpmOcpError, ArithmeticError):
    """A user callback returned non-finite values."""

    def __init__(self, callback, message=None):
        self.callback = callback
        super().__init__(message or f"callback {callback!r} returned non-finite values")


class DomainError(IpmOcpError, ValueError):
    """Argument outside the domain of a barrier function."""


class InteriorityError(IpmOcpError, ValueError):
    """A point violates strict interiority of the inequality constraints."""

    def __init__(self, message, kind=None, index=None, node=None):
        self.kind = kind
        self.index = index
        self.node = node
        super().__init__(message)


class SolverError(IpmOcpError, RuntimeError):
    """Base class for BVP solver failures; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class NonConvergenceError(SolverError):
    pass


class LineSearchError(NonConvergenceError):
    pass


class SingularJacobianError(SolverError):
    def __init__(self, message, best=None, location=None):
        self.location = location
        super().__init__(message, best)


class BudgetError(SolverError):
    def __init__(self, message, best=None, residual=None):
        self.residual = residual
        super().__init__(message, best)
