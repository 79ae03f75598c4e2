"""Exception hierarchy for rmldp."""

from typing import Optional


class RmldpError(Exception):
    """Base class for all errors raised by rmldp."""


class EnsembleError(RmldpError, ValueError):
    """A matrix law that violates its declared kind or shape."""


class DegenerateActionError(RmldpError, ArithmeticError):
    """|gx| vanished, so the projective action is undefined."""


class ConvergenceError(RmldpError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, gap: Optional[float] = None, iterations: int = 0):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


class OutOfDomainError(RmldpError, ValueError):
    """An argument lies outside the interval where the model is valid."""


class DegenerateVarianceError(RmldpError, ArithmeticError):
    """Lambda'' is not positive at the requested s."""


class EnumerationGuardError(RmldpError, ValueError):
    """Exhaustive enumeration would exceed the configured number of paths."""


class WeightOverflowError(RmldpError, OverflowError):
    """Importance weights spread beyond what a double can represent."""


class DivergentIntegralError(RmldpError, ValueError):
    """The tilted integral of a target function does not converge."""


class ConfigError(RmldpError, ValueError):
    """An experiment configuration is inconsistent."""


class StageError(RmldpError):
    """A pipeline stage failed; wraps the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
