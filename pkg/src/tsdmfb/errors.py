"""Exception hierarchy.

Validation problems derive from ``ValidationError`` (CLI exit code 2) and
fitting failures from ``ConvergenceError`` (exit code 3).
"""


class TSDMError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(TSDMError, ValueError):
    pass


class DomainError(ValidationError):
    """A point lies outside the open simplex."""


class InvalidParameterError(ValidationError):
    """A Dirichlet concentration is not strictly positive and finite."""


class ConstantAttributeError(ValidationError):
    pass


class InsufficientClassSizeError(ValidationError):
    def __init__(self, label, size, n_min):
        self.label = label
        self.size = size
        self.n_min = n_min
        super().__init__(
            f"class {label!r} has {size} points, fewer than n_min={n_min}"
        )


class UnknownLabelError(ValidationError):
    pass


class ConvergenceError(TSDMError, RuntimeError):
    pass


class NonConvergenceError(ConvergenceError):
    """Dirichlet MLE exhausted its iteration budget."""


class DegenerateDataError(ConvergenceError):
    """Weighted sample too small to support a Dirichlet fit.

    Raised when the effective number of points falls below two; the EM
    driver treats it as a signal to discard the offending component.
    """


class AllRunsDiscardedError(ConvergenceError):
    pass
