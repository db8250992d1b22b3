"""Exception types shared across the solver modules."""


class SolverError(RuntimeError):
    """Base class for failures inside a scheme solve."""


class MatrixStructureError(SolverError):
    """An assembled linear system violates the monotone matrix requirements.

    Carries the offending matrix report so callers can inspect the witness
    row or cycle.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergenceError(SolverError):
    """An iterative loop exhausted its iteration budget.

    ``history`` holds the sup-norm updates (or outer increments) observed so
    far, so the caller can judge whether the iteration was stalling or
    diverging.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConfigError(ValueError):
    """A run configuration failed parsing or semantic validation."""
