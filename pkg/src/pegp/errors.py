"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input or configuration that fails validation."""


class NumericalError(RuntimeError):
    """A numerical failure such as a Cholesky breakdown after jitter escalation."""
