"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, ``DataError``
exits 2, ``NumericError`` exits 3.
"""


class IcsortError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(IcsortError):
    """Invalid configuration, flags, or run setup."""


class DataError(IcsortError):
    """Malformed, inconsistent, or insufficient input data."""


class NumericError(IcsortError):
    """Numeric failure: non-finite values, divergence, degenerate systems."""
