"""Exception hierarchy shared by every module in the package."""


class CSWFError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CSWFError, ValueError):
    pass


class NumericError(CSWFError, ArithmeticError):
    """Raised when a simulation produces non-finite values."""

    def __init__(self, message, step=None, projection=None):
        super().__init__(message)
        self.step = step
        self.projection = projection


class FormatError(CSWFError, ValueError):
    """Malformed input file. ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CorruptModelError(CSWFError, IOError):
    pass


class UnsupportedVersionError(CSWFError, IOError):
    pass
