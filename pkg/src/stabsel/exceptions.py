"""Exception hierarchy shared by every module."""


class StabselError(Exception):
    """Base class for all errors raised by stabsel."""


class ShapeError(StabselError, ValueError):
    pass


class EmptyMask(StabselError, ValueError):
    pass


class FormatError(StabselError, ValueError):
    pass


class ArgumentError(StabselError, ValueError):
    pass


class DegenerateLabels(StabselError, ValueError):
    """Raised when a classification problem has fewer than two classes."""


class NumericError(StabselError, ValueError):
    pass


class ConfigError(StabselError, ValueError):
    """Invalid or incomplete run configuration; the message names the field."""


class IoError(StabselError, OSError):
    """A file could not be read or written."""
