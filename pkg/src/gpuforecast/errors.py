"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ConfigError -> 1 (usage), DataError -> 2,
anything else -> 3.
"""


class GpuForecastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GpuForecastError):
    """Invalid parameter, flag, or configuration value."""


class DataError(GpuForecastError):
    """Invalid, inconsistent, or degenerate input data."""
