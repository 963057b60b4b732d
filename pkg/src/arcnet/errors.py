"""Exception hierarchy; each class maps to a CLI exit code."""


class ArcNetError(Exception):
    exit_code = 1


class ConfigError(ArcNetError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    """Invalid numeric parameter passed to an operation."""


class DataError(ArcNetError):
    exit_code = 3


class FormatError(DataError, ValueError):
    """Image file has an unsupported layout (e.g. not 3-channel)."""


class ShapeError(ArcNetError, ValueError):
    exit_code = 3


class NumericError(ArcNetError, FloatingPointError):
    exit_code = 4
