"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """An input is degenerate for the requested operation (e.g. zero norm)."""


class DegenerateVarianceError(ValueError):
    """A vector that needs sample variance is constant.

    `side` names which argument was constant so callers can tell a broken
    reward model apart from a broken target batch.
    """

    def __init__(self, side: str, message: str = ""):
        self.side = side
        super().__init__(message or f"zero sample variance on side '{side}'")


class EvaluationError(RuntimeError):
    """A function produced a non-finite value where a finite one is required."""


class ConfigurationError(ValueError):
    """A config value or argument is outside its documented domain."""


class VocabularyError(ValueError):
    """A token is not part of the model vocabulary."""


class ParseError(ValueError):
    """A persisted file could not be parsed; carries the offending line."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DatasetError(ValueError):
    """A dataset violates a structural requirement (empty, too small, ...)."""


class TerminalStateError(RuntimeError):
    """An environment was stepped past its terminal state."""
