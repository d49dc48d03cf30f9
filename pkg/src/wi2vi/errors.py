"""Exception hierarchy shared by the pipeline stages."""


class Wi2ViError(Exception):
    """Base class for all package errors."""


class ConfigError(Wi2ViError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(Wi2ViError):
    """Problem with input data contents (empty sets, bad shapes, short traces)."""


class FormatError(DataError):
    """A file on disk does not match its expected binary or text format."""
