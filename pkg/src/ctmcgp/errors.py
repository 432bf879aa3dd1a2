"""Exception types shared across the package.

The CLI maps each class to a process exit code.
"""


class CTMCError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(CTMCError, ValueError):
    """Malformed or inconsistent user input."""

    exit_code = 1


class ParseError(InputError):
    """A text format could not be parsed.

    ``offset`` is the byte offset of the offending character when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(CTMCError, ArithmeticError):
    """A computation produced values outside its numerical contract."""

    exit_code = 2


class GuardError(CTMCError):
    """A request was refused because it exceeds a configured size limit."""

    exit_code = 3


class StateError(CTMCError, RuntimeError):
    """An operation was called before its prerequisites were computed."""

    exit_code = 1
