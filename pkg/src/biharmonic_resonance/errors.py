"""Exception hierarchy shared by all modules.

The CLI maps ``ValidationError`` and ``DomainError`` to exit status 2 and
every ``NumericalFailure`` subclass to exit status 3.
"""


class ThresholdError(Exception):
    """Base class for all library errors."""


class ValidationError(ThresholdError, ValueError):
    """Invalid configuration or argument outside a module precondition."""


class DomainError(ValidationError):
    """Argument outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Evaluation at, or averaging across, a non-integrable singularity."""


class NumericalFailure(ThresholdError, RuntimeError):
    """A numerical procedure failed to reach its stated accuracy."""


class NotInvertibleError(NumericalFailure):
    """A Schur complement or ladder operator is singular on its subspace."""


class ContractionError(NumericalFailure):
    """A Neumann series did not contract; the caller should reduce |mu|."""


class InvariantViolation(NumericalFailure):
    """A structural statement that must hold (e.g. invertible T3) failed."""


class TuningFailure(NumericalFailure):
    """Root finding for a potential parameter did not bracket or converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class BoundaryLimitError(NumericalFailure):
    """Extrapolation toward the real axis did not stabilise."""
