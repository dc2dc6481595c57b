"""Exception types shared across the package."""


class RegliqError(Exception):
    """Base class for all package errors."""


class SchemaError(RegliqError):
    """Config document is missing keys or has values of the wrong type."""


class DimensionMismatch(RegliqError):
    """Array dimensions in a config or model are inconsistent."""


class NegativeOffDiagonal(RegliqError):
    """Generator matrix has a negative off-diagonal transition rate."""


class RowSumNonzero(RegliqError):
    """Generator matrix row sum exceeds the snapping tolerance."""


class AssumptionViolated(RegliqError):
    """Coefficient data falls outside the required positivity/bound boxes."""


class OutOfHorizon(RegliqError):
    """Time argument lies outside [0, T]."""


class DomainError(RegliqError):
    """Scalar argument outside the mathematical domain of an operation."""


class ToleranceFailure(RegliqError):
    """Integrator could not meet its accuracy target on some step."""


class MonotonicityViolation(RegliqError):
    """Penalization ladder values decreased where theory forbids it."""


class OutOfGrid(RegliqError):
    """Evaluation time lies beyond the span of a solution surface."""
