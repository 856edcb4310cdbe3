"""Exception hierarchy shared by all modules."""


class TaskDecompError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(TaskDecompError, ValueError):
    pass


class InputOutOfBounds(TaskDecompError, ValueError):
    pass


class ExecutionRejected(TaskDecompError, ValueError):
    """An execution failed validation and cannot be recorded."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EmptySet(TaskDecompError, LookupError):
    pass


class Infeasible(TaskDecompError, RuntimeError):
    pass


class MaxStepsExceeded(TaskDecompError, RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EmptyDecomposition(TaskDecompError, RuntimeError):
    """A subtask lost every trajectory during decomposition.

    ``output`` holds the partial decomposition (audit log included) at the
    moment the stage emptied, so callers can still report what was checked.
    """

    def __init__(self, message, output=None, slot=None):
        super().__init__(message)
        self.output = output
        self.slot = slot


class ProjectionBlowup(TaskDecompError, RuntimeError):
    pass


class DegenerateHull(TaskDecompError, ValueError):
    pass


class WitnessNotFound(TaskDecompError, RuntimeError):
    pass


class ConfigInvalid(TaskDecompError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = {"config": errors}
        self.errors = dict(errors)
        msg = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(msg)


class BootstrapFailed(TaskDecompError, RuntimeError):
    pass
