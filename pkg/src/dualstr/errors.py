"""
Exception hierarchy for dualstr.

Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Optional

EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4


class DualStrError(Exception):
    """Base class for all dualstr errors."""

    exit_code = EXIT_USAGE

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(DualStrError):
    """Raised when a command is invoked with inconsistent arguments."""


class ConfigError(DualStrError):
    """Configuration related errors"""

    exit_code = EXIT_CONFIG


class ConfigKeyError(ConfigError):
    """A specific key of the config file is unknown, missing or invalid."""

    def __init__(
        self,
        section: str,
        key: Optional[str],
        reason: str,
        line: Optional[int] = None,
    ):
        where = f"[{section}]" if key is None else f"[{section}] {key}"
        if line is not None:
            where = f"{where} (line {line})"
        super().__init__(f"{where}: {reason}")
        self.section = section
        self.key = key
        self.line = line


class DataError(DualStrError):
    """Errors caused by tensors, labels or dataset contents."""

    exit_code = EXIT_DATA


class ShapeError(DataError):
    """Operand shapes do not agree."""


class DegenerateRowError(DataError):
    """An attention row has every entry masked."""


class EmptyLossError(DataError):
    """Every target position is ignored, so the loss is undefined."""


class LabelError(DataError):
    """A token id is outside the valid range."""


class LengthError(DataError):
    """A word is longer than the decoder can represent."""


class CharsetError(DataError):
    """A word contains a character outside the active charset."""


class ContractError(DataError):
    """A function was called outside its documented contract."""


class NonFiniteGradientError(DataError):
    """A gradient holds NaN or infinity; the optimizer step is aborted."""

    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite gradient in tensor '{tensor_name}'")
        self.tensor_name = tensor_name


class PPMParseError(DataError):
    """A PPM file is malformed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class DatasetIOError(DataError):
    """A dataset file is missing or unreadable."""

    def __init__(self, relpath: str, reason: str):
        super().__init__(f"{relpath}: {reason}")
        self.relpath = relpath


class CheckpointError(DualStrError):
    exit_code = EXIT_CHECKPOINT


class CheckpointFormatError(CheckpointError):
    """Bad magic number or unsupported format version."""


class CheckpointIntegrityError(CheckpointError):
    """Header and payload disagree, usually a truncated file."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint tensors do not match the model built from the config."""
