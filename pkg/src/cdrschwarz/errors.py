"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, geometry, or input data."""


class OutOfDomainError(ConfigurationError):
    """A sample point lies outside the mesh rectangle beyond tolerance."""


class FormatError(ConfigurationError):
    """A persisted binary file is malformed."""


class FactorizationError(RuntimeError):
    """A linear-system factorization failed (singular or ill-posed matrix)."""


class DivergenceError(RuntimeError):
    """A solver produced non-finite values."""
