"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input fails a structural or numerical precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced an inconsistent result."""
