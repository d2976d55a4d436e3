"""Error types shared across the package.

The CLI maps these onto exit codes (config 2, format 3, consistency 4),
so every user-facing failure should be raised as one of them or as a
plain ValueError for programming-contract violations.
"""


class QuantaError(Exception):
    """Base class for package-specific errors."""


class ConfigError(QuantaError, ValueError):
    """Invalid configuration value or malformed config file."""


class FormatError(QuantaError, ValueError):
    """Malformed, truncated, or inconsistent binary file."""


class SequenceError(QuantaError, RuntimeError):
    """Frame fed out of order into a strictly monotone consumer."""


class ConsistencyError(QuantaError, RuntimeError):
    """Snapshot consistency violation observed by a poller."""
