"""Exception types shared across the package.

Most errors subclass ``ValueError`` so callers can keep a single
``except ValueError`` for bad input, the same way the entry script does.
"""

from typing import Optional


class FdvmError(Exception):
    """Root of every error raised on purpose by fdvmnet."""


class ShapeError(FdvmError, ValueError):
    """Tensor extents do not agree with what an operation needs."""


class DomainError(FdvmError, ValueError):
    """A value lies outside the domain of a function."""


class ConfigError(FdvmError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class InputError(FdvmError, ValueError):
    """Missing or unusable input data (empty folder, bad manifest)."""


class ContractError(FdvmError, ValueError):
    """A caller broke an API precondition."""


class NumericError(FdvmError, ValueError):
    """Non-finite values reached a computation that forbids them."""


class CheckpointFormatError(FdvmError, ValueError):
    """Checkpoint bytes could not be decoded."""

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class CheckpointVersionError(CheckpointFormatError):
    """Checkpoint written by an unsupported format version."""


class PartialFailure(FdvmError):
    """Some items of a batch command failed, the rest succeeded."""

    def __init__(self, message: str, failed: int) -> None:
        self.failed = failed
        super().__init__(message)
