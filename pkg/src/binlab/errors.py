"""Exception types shared across the package."""


class BinlabError(Exception):
    """Base class for errors raised by this package."""


class UsageError(BinlabError):
    """Bad command-line arguments or unknown configuration keys."""


class DataError(BinlabError):
    """Missing, unreadable, or inconsistent input data."""


class FormatError(DataError):
    """File exists but is not a readable raster of a supported format."""


class ConfigError(DataError):
    """Invalid or incomplete run configuration (datasets, manifests, stages)."""


class NumericsError(BinlabError):
    """A non-finite value appeared where the math requires finite ones."""
