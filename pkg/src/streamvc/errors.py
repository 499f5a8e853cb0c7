"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes do not agree."""


class StateError(RuntimeError):
    """A streaming state was used out of contract (wrong phase, reuse after final, ...)."""


class NumericError(ArithmeticError):
    """Non-finite values detected in a computation."""


class ConfigError(ValueError):
    """Invalid configuration values."""


class ParseError(ValueError):
    """Architecture DSL parse failure, carries the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class FormatError(ValueError):
    """Weight store file format violation, carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BuildError(ValueError):
    """A model could not be assembled from the given weights."""
