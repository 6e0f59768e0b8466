"""Exception types shared across the stack."""


class StackError(Exception):
    """Base class for all deskdrive errors."""


class RangeError(StackError, ValueError):
    """A numeric input fell outside its documented range."""


class ShapeError(StackError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(StackError, ValueError):
    """A configuration value or combination is invalid."""


class ValidationError(StackError, ValueError):
    """A record or message failed field validation."""


class DataError(StackError, ValueError):
    """A dataset is empty, too small, or otherwise unusable."""


class NumericError(StackError, ArithmeticError):
    """A computation produced non-finite values."""


class StateError(StackError, RuntimeError):
    """An operation was called in a state that cannot serve it."""


class StorageError(StackError, OSError):
    """Disk persistence failed."""


class IntegrityError(StackError, RuntimeError):
    """Stored data is internally inconsistent (missing files, bad refs)."""
