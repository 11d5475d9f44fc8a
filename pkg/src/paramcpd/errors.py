"""Shared exception types, mapped to CLI exit codes in `cli`."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(RuntimeError):
    """Missing, malformed or degenerate data (CLI exit code 3)."""


class DivergenceError(RuntimeError):
    """Numerical integration left the admissible region (CLI exit code 4)."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss (CLI exit code 4)."""
