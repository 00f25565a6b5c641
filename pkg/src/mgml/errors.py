"""Exception types shared across the package, plus process exit codes.

Exit-code convention (used by the CLI): 0 ok, 2 configuration error,
3 data/format error, 4 numeric or training failure.
"""

from dataclasses import dataclass


class MgmlError(Exception):
    """Base class for package-specific errors."""

    exit_code = 2


class ConfigError(MgmlError):
    """Bad run configuration: unknown keys, unsatisfiable task mix, missing checkpoints."""

    exit_code = 2


class SchemaError(ConfigError):
    """A prompt template could not be instantiated (missing placeholder binding)."""


class TaskNotFoundError(LookupError, ConfigError):
    """Requested task name is not in the registry."""


class DataFormatError(MgmlError):
    """Malformed binary or text payload. ``offset`` names the first bad byte."""

    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvalidTokenError(MgmlError):
    """A motion-token id outside the codebook range."""

    exit_code = 3


class NumericError(MgmlError):
    """Non-finite value produced inside a numeric stage; message names the stage."""

    exit_code = 4


class TrainingError(MgmlError):
    """Training diverged or could not proceed."""

    exit_code = 4


@dataclass(frozen=True)
class Diagnostic:
    """Recoverable anomaly found while parsing model output.

    ``position`` is a snippet index for script parsing and a token index for
    stream parsing.
    """

    message: str
    position: int

    def __str__(self) -> str:
        return f"[pos {self.position}] {self.message}"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, MgmlError):
        return exc.exit_code
    if isinstance(exc, (ValueError, KeyError, LookupError, FileNotFoundError)):
        return 2
    if isinstance(exc, OSError):
        return 3
    return 1
