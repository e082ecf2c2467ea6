"""Exception hierarchy.  Each class carries the CLI exit code it maps to."""


class OneShotError(Exception):
    exit_code = 1


class DataFormatError(OneShotError, ValueError):
    """Malformed or inconsistent input document."""

    exit_code = 4


class SchemaVersionError(OneShotError):
    exit_code = 5


class EpisodeMismatchError(OneShotError, ValueError):
    """Predictions or episodes that do not line up with each other."""

    exit_code = 6


class WeightError(OneShotError, ValueError):
    """Missing weight tensor or tensor of the wrong shape."""

    exit_code = 7


class ShapeError(ValueError):
    pass
