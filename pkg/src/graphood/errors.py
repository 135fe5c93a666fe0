"""Exception hierarchy shared by all graphood modules."""


class GraphOODError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GraphOODError, ValueError):
    """Invalid argument, configuration field, or dataset invariant."""


class ParseError(ValidationError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(GraphOODError):
    """Non-finite value produced where a finite one is required."""
