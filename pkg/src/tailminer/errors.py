"""Exception hierarchy shared by every tailminer module."""

from __future__ import annotations


class TailminerError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class InvalidInputError(TailminerError, ValueError):
    exit_code = 2


class ParseError(InvalidInputError):
    """Malformed file content. ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class InvalidProfileError(InvalidInputError):
    pass


class ConfigError(TailminerError, ValueError):
    exit_code = 1


class StageOrderError(ConfigError):
    """An upstream pipeline artifact is missing."""

    exit_code = 2


class UndefinedBaselineError(InvalidInputError):
    pass


class TrainingDivergedError(TailminerError, FloatingPointError):
    exit_code = 3

    def __init__(self, layer: int, message: str | None = None):
        super().__init__(message or f"non-finite gradient in layer {layer}")
        self.layer = layer


class FrozenModelError(TailminerError, RuntimeError):
    exit_code = 3
