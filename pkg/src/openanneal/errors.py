"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration input (maps to CLI exit code 1)."""


class ValidityError(RuntimeError):
    """Numerical-validity violation during a run (maps to CLI exit code 2)."""
