class InputError(ValueError):
    """Malformed, mismatched or unreadable input data."""


class ConfigError(ValueError):
    """Configuration that violates a module invariant."""
