"""Exception hierarchy shared by every module."""


class QuipError(Exception):
    """Base class for all package errors."""


class DataError(QuipError, ValueError):
    """Input values violate a documented precondition."""


class FormatError(QuipError, ValueError):
    """A file does not match the expected binary layout."""


class NumericalError(QuipError, ArithmeticError):
    """An iterative routine failed to converge or produced an invalid factor."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class IoError(QuipError, OSError):
    """Reading or writing a file failed."""
