"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code, see cli.EXIT_CODES.
"""


class SeqclError(Exception):
    """Base class for all package errors."""


class ConfigError(SeqclError):
    """Invalid configuration value or combination."""


class FormatError(SeqclError):
    """Malformed file on disk (bad magic, truncated payload, shape mismatch)."""


class NumericError(SeqclError):
    """Numerical failure: zero norms, non-finite gradients, degenerate input."""
