"""Exception types shared across the package."""


class LptmError(Exception):
    """Base class for all package errors."""


class ContractError(LptmError, ValueError):
    """An operation was called with inputs violating its preconditions."""


class FormatError(LptmError, ValueError):
    """A file is not in a supported or well-formed format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TruncatedFileError(LptmError, OSError):
    """A file ended before all declared data could be read."""
