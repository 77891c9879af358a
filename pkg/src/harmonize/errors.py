"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and DataError (including
NoDataError) to exit code 3; everything else is a bug.
"""


class HarmonizeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(HarmonizeError):
    """Invalid configuration: bad JSON, unknown keys, out-of-range values."""


class DataError(HarmonizeError):
    """Invalid or unusable input data."""


class NoDataError(DataError):
    """A covariate cell or filter matched no records."""


class DegenerateModelError(HarmonizeError):
    """A fitted or implied distribution assigns zero mass where data has mass."""
