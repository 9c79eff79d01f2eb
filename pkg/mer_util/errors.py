"""Holds the exception hierarchy shared by all modules."""

from typing import Any


class MerError(Exception):
    """Base class of every error raised by `mer_util`."""


class DimensionError(MerError):
    """Operand shapes that do not fit together."""

    def __init__(self, op: str, *shapes: Any, detail: str = "") -> None:
        self.op = op
        self.shapes = shapes
        self.detail = detail

        message = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ConfigurationError(MerError):
    """Hyperparameters or settings that cannot produce a valid computation."""


class NumericalError(MerError):
    """A primitive produced NaN or Inf from finite inputs."""

    def __init__(self, op: str, where: str = "values") -> None:
        self.op = op
        self.where = where
        super().__init__(f"{op}: non-finite {where}")


class TapeError(MerError):
    """Misuse of the differentiation tape."""


class FormatError(MerError):
    """A file that does not follow its format."""

    def __init__(self, path: Any, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class CheckpointMismatchError(MerError):
    """Checkpoint contents that do not match the model configuration."""

    def __init__(self, name: str, expected: Any, found: Any) -> None:
        self.name = name
        self.expected = expected
        self.found = found
        super().__init__(f"checkpoint parameter {name!r}: expected {expected}, found {found}")


class DatasetError(MerError):
    """A dataset that cannot serve the requested operation."""
