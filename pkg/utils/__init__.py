"""Shared utilities: logging, configuration and the error taxonomy."""

from .errors import (
    CaptionParseError,
    CheckpointFormatError,
    ContractError,
    DegenerateLossError,
    DimensionError,
    FormatError,
    HybridError,
    NumericalError,
    TokenizationError,
)
from .logger import log_component_call, setup_logger

__all__ = [
    "CaptionParseError",
    "CheckpointFormatError",
    "ContractError",
    "DegenerateLossError",
    "DimensionError",
    "FormatError",
    "HybridError",
    "NumericalError",
    "TokenizationError",
    "log_component_call",
    "setup_logger",
]
