"""Continuous and discrete adapters from post-STC features to the decoder width."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.nn import MLP, Linear, Module
from core.tensor import Tensor
from tokenizer.fsq import FSQ
from tokenizer.stc import FeatureGrid
from utils.config import FSQConfig
from utils.errors import ContractError, DimensionError


@dataclass
class DiscreteCodes:
    """Row-major G x G grid of flat codebook indices."""

    side: int
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if self.indices.shape[0] != self.side * self.side:
            raise DimensionError(f"{self.indices.shape[0]} codes do not fill a {self.side}x{self.side} grid")

    def validate(self, codebook_size: int) -> "DiscreteCodes":
        if np.any(self.indices < 0) or np.any(self.indices >= codebook_size):
            raise ContractError(f"code index outside [0, {codebook_size})")
        return self


class ContinuousAdapter(Module):
    """Two-layer GELU MLP: 9*d_vit -> d_model -> d_model per token."""

    def __init__(self, in_features: int, d_model: int, rng: np.random.Generator):
        self.mlp = MLP(in_features, d_model, d_model, rng)

    def forward(self, grid: FeatureGrid) -> FeatureGrid:
        return FeatureGrid(self.mlp(grid.data))


class DiscreteAdapter(Module):
    """Linear head to FSQ channels, quantize, then a two-layer MLP to d_model."""

    def __init__(self, in_features: int, fsq_config: FSQConfig, d_model: int, rng: np.random.Generator):
        self.fsq = FSQ(fsq_config)
        self.head = Linear(in_features, self.fsq.channels, rng)
        self.mlp = MLP(self.fsq.channels, d_model, d_model, rng)

    def quantize(self, grid: FeatureGrid) -> Tuple[np.ndarray, Tensor]:
        codes, quantized = self.fsq.quantize(self.head(grid.data))
        return self.fsq.to_index(codes), quantized

    def forward(self, grid: FeatureGrid) -> Tuple[np.ndarray, FeatureGrid]:
        indices, quantized = self.quantize(grid)
        return indices, FeatureGrid(self.mlp(quantized))

    def embed_codes(self, indices: np.ndarray) -> Tensor:
        """Embeddings for given code indices, as used for pixel-decoder conditioning."""
        return self.mlp(Tensor(self.fsq.dequantize(indices)))


def continuous_adapt(grid: FeatureGrid, adapter: ContinuousAdapter) -> FeatureGrid:
    return adapter(grid)


def discrete_adapt(grid: FeatureGrid, adapter: DiscreteAdapter) -> Tuple[DiscreteCodes, FeatureGrid]:
    indices, embeddings = adapter(grid)
    if indices.ndim != 1:
        raise DimensionError("discrete_adapt works on a single grid; call the adapter directly for batches")
    return DiscreteCodes(grid.side, indices), embeddings
