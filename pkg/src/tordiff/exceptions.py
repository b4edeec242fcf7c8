"""Error types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent (CLI exit code 2)."""


class NumericError(RuntimeError):
    """A computation degenerated numerically (CLI exit code 3)."""
