"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented contract (bad probabilities, shapes, ranges)."""


class CapExceededError(ValidationError):
    """An exhaustive enumeration would exceed the configured cap."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or otherwise unusable numbers."""
