"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised for malformed arguments (dimension mismatch, empty data, bad sizes)."""


class InfeasibleInstanceError(ValueError):
    """Raised when a requested heterogeneity level cannot fit inside the domain."""


class ConfigError(ValueError):
    """Raised for invalid algorithm or experiment configuration."""
