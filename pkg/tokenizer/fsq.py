"""Finite scalar quantization and mixed-radix code packing."""

from typing import List, Sequence, Tuple

import numpy as np

from core.ops import round_ste, tanh
from core.tensor import Tensor, mul
from utils.config import FSQConfig
from utils.errors import ContractError, DimensionError


class FSQ:
    """Parameter-free quantizer: bound each channel, round to its integer lattice."""

    def __init__(self, config: FSQConfig):
        self.levels: List[int] = list(config.levels)
        self.half = np.asarray([level // 2 for level in self.levels], dtype=np.float32)
        self.codebook_size = config.codebook_size
        self.basis = mixed_radix_basis(self.levels)
        self.name = "FSQ"

    @property
    def channels(self) -> int:
        return len(self.levels)

    def bound(self, z: Tensor) -> Tensor:
        if z.shape[-1] != self.channels:
            raise DimensionError(f"FSQ expects {self.channels} channels, got {z.shape[-1]}")
        return mul(tanh(z), Tensor(self.half))

    def quantize(self, z: Tensor) -> Tuple[np.ndarray, Tensor]:
        """(codes in [0, L), rounded values); rounding is straight-through."""
        quantized = round_ste(self.bound(z))
        codes = (np.rint(quantized.data) + self.half).astype(np.int64)
        return codes, quantized

    def to_index(self, codes: np.ndarray) -> np.ndarray:
        return code_to_index(codes, self.levels)

    def to_codes(self, indices: np.ndarray) -> np.ndarray:
        return index_to_code(indices, self.levels)

    def dequantize(self, indices: np.ndarray) -> np.ndarray:
        """Lattice values in [-L//2, L//2] for flat indices."""
        return (self.to_codes(indices) - self.half).astype(np.float32)


def mixed_radix_basis(levels: Sequence[int]) -> np.ndarray:
    basis = np.ones(len(levels), dtype=np.int64)
    for i in range(1, len(levels)):
        basis[i] = basis[i - 1] * levels[i - 1]
    return basis


def fsq_bound(z: Tensor, config: FSQConfig) -> Tensor:
    return FSQ(config).bound(z)


def fsq_quantize(z: Tensor, config: FSQConfig) -> Tuple[np.ndarray, Tensor]:
    return FSQ(config).quantize(z)


def code_to_index(codes, levels: Sequence[int]) -> np.ndarray:
    """idx = sum(codes[i] * prod(levels[:i])) over the last axis."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.shape[-1:] != (len(levels),):
        raise DimensionError(f"codes need a trailing axis of {len(levels)}, got shape {codes.shape}")
    limits = np.asarray(levels, dtype=np.int64)
    if np.any(codes < 0) or np.any(codes >= limits):
        raise ContractError(f"code digits out of range for levels {list(levels)}")
    return (codes * mixed_radix_basis(levels)).sum(axis=-1)


def index_to_code(indices, levels: Sequence[int]) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    size = int(np.prod(levels))
    if np.any(indices < 0) or np.any(indices >= size):
        raise ContractError(f"codebook index out of range [0, {size})")
    limits = np.asarray(levels, dtype=np.int64)
    return (indices[..., None] // mixed_radix_basis(levels)) % limits


def lattice_preimage(codes, levels: Sequence[int], shrink: float = 1e-3) -> np.ndarray:
    """Pre-activation z whose bound lands just inside the lattice point of `codes`."""
    half = np.asarray([level // 2 for level in levels], dtype=np.float64)
    ratio = (np.asarray(codes, dtype=np.float64) - half) / half
    return np.arctanh(ratio * (1.0 - shrink)).astype(np.float32)
