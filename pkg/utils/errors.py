"""Error taxonomy shared by every package."""

from typing import Optional


class HybridError(Exception):
    """Base class for all errors raised by this project."""


class ContractError(HybridError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Tensor or image extents do not fit the operation."""


class DegenerateLossError(ContractError):
    """A loss was requested over an empty mask."""


class NumericalError(ContractError):
    """NaN or Inf appeared where finite values are required."""


class TokenizationError(ContractError):
    """Text contains a character outside the fixed alphabet."""


class CaptionParseError(ContractError):
    """Caption or question text does not follow the template grammar."""


class FormatError(HybridError):
    """A file could not be read or written in the expected format."""


class CheckpointFormatError(FormatError):
    """A checkpoint archive is malformed at a known byte offset."""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"{message} at byte offset {offset}{where}")
