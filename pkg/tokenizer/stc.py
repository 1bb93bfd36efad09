"""Spatial-to-channel rearrangement of square token grids."""

import math
from dataclasses import dataclass

from core.tensor import Tensor, reshape, transpose
from utils.config import STC_BLOCK
from utils.errors import DimensionError


@dataclass
class FeatureGrid:
    """Square grid of feature vectors stored row-major as (..., side*side, d)."""

    data: Tensor

    def __post_init__(self):
        if self.data.ndim < 2:
            raise DimensionError(f"feature grid needs (..., tokens, d), got {self.data.shape}")
        side = math.isqrt(self.data.shape[-2])
        if side * side != self.data.shape[-2]:
            raise DimensionError(f"{self.data.shape[-2]} tokens do not form a square grid")

    @property
    def side(self) -> int:
        return math.isqrt(self.data.shape[-2])

    @property
    def d(self) -> int:
        return self.data.shape[-1]


def _block_axes(lead: int):
    # (..., A, r, B, c, d) <-> (..., A, B, r, c, d)
    return list(range(lead)) + [lead, lead + 2, lead + 1, lead + 3, lead + 4]


def stc_rearrange(grid: FeatureGrid, block: int = STC_BLOCK) -> FeatureGrid:
    """Fold each block x block spatial patch into one token, cells row-major, channels contiguous."""
    side, d = grid.side, grid.d
    if side % block:
        raise DimensionError(f"grid side {side} is not divisible by the STC block {block}")
    outer = side // block
    lead_shape = grid.data.shape[:-2]
    x = reshape(grid.data, lead_shape + (outer, block, outer, block, d))
    x = transpose(x, _block_axes(len(lead_shape)))
    return FeatureGrid(reshape(x, lead_shape + (outer * outer, block * block * d)))


def stc_inverse(grid: FeatureGrid, block: int = STC_BLOCK) -> FeatureGrid:
    outer, wide = grid.side, grid.d
    if wide % (block * block):
        raise DimensionError(f"channel width {wide} is not a multiple of {block * block}")
    d = wide // (block * block)
    lead_shape = grid.data.shape[:-2]
    x = reshape(grid.data, lead_shape + (outer, outer, block, block, d))
    x = transpose(x, _block_axes(len(lead_shape)))
    return FeatureGrid(reshape(x, lead_shape + (outer * block * outer * block, d)))
