"""Exception types shared across the toolkit."""


class CardiotoxError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(CardiotoxError, ValueError):
    """A value or data structure violates an operation's precondition."""


class ParseError(CardiotoxError, ValueError):
    """A CSV or config stream could not be parsed.

    ``line`` is the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BundleError(CardiotoxError):
    """A model bundle could not be written or restored."""


class TrainingDivergedError(CardiotoxError):
    """Training produced a non-finite loss. ``epoch`` is 1-based."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")


class UsageError(CardiotoxError):
    """Bad command-line flags or config file contents."""
