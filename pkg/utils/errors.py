"""
Exception hierarchy shared by the library and the command-line front end
"""


class NvQocError(Exception):
    """Base class for toolkit failures that map onto a CLI exit code"""

    exit_code = 1


class ConfigError(NvQocError):
    """Problem configuration could not be parsed or validated"""

    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericError(NvQocError):
    """A numerical evaluation failed (non-finite values, failed propagation)"""

    exit_code = 3

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (at evaluation {index})"
        super().__init__(message)


class UnsupportedCombinationError(NvQocError):
    """Requested optimizer/cost combination is not available"""

    exit_code = 4
