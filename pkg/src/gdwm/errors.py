"""Exception hierarchy shared across the package."""


class GdwmError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GdwmError, ValueError):
    """A precondition on an argument was violated."""


class EmptyInputError(GdwmError, ValueError):
    """An input that must be nonempty was empty."""


class ConsistencyError(GdwmError):
    """Two inputs that must describe the same object disagree."""


class CapacityError(GdwmError):
    """A sequence exceeds what the model can hold."""


class TrainingDivergenceError(GdwmError):
    """Pretraining produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"training loss became non-finite at step {step}")


class NumericalError(GdwmError):
    """A non-finite value appeared where a finite one is required."""


class RunAbortedError(GdwmError):
    """An adaptation run failed partway; carries the partial report."""

    def __init__(self, stage: str, report, cause: Exception):
        self.stage = stage
        self.report = report
        self.cause = cause
        super().__init__(f"run aborted during {stage}: {cause}")
