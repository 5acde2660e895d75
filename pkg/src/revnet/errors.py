"""Exception types shared across the package.

CLI exit-code mapping: ConfigError -> 2, DataError subtree -> 3,
NumericError -> 4.
"""


class RevnetError(Exception):
    pass


class ShapeError(RevnetError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(RevnetError):
    """A value is outside the mathematical domain of an operation."""


class StateError(RevnetError):
    """An operation was called without the state it needs (e.g. a trace)."""


class NumericError(RevnetError):
    """A non-finite value appeared where finite math is required."""


class ConfigError(RevnetError):
    """Invalid or unknown configuration input."""


class DataError(RevnetError):
    """Base for dataset/file problems."""


class FormatError(DataError):
    """A file does not match its declared binary format."""


class ConsistencyError(DataError):
    """Two inputs that must agree (e.g. image/label counts) do not."""


class CapacityError(DataError):
    """A subsampling profile asks for more samples than a class has."""
