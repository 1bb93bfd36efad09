"""Hybrid tokenizer: one shared encoder feeding a continuous and a discrete adapter."""

from typing import Dict, List, Tuple

import numpy as np

from core.nn import Module
from core.tensor import Parameter, Tensor, no_grad
from tokenizer.adapters import ContinuousAdapter, DiscreteAdapter
from tokenizer.stc import FeatureGrid, stc_rearrange
from tokenizer.vit import VisionEncoder
from utils.config import STC_BLOCK, FSQConfig, ViTConfig
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

ADAPTERS = ("continuous", "discrete")


class HybridTokenizer(Module):
    """Continuous embeddings for understanding, discrete codes for generation."""

    def __init__(self, vit_config: ViTConfig, fsq_config: FSQConfig, d_model: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vit_config = vit_config
        self.fsq_config = fsq_config
        self.d_model = d_model
        wide = STC_BLOCK * STC_BLOCK * vit_config.d_vit
        self.encoder = VisionEncoder(vit_config, rng)
        self.continuous = ContinuousAdapter(wide, d_model, rng)
        self.discrete = DiscreteAdapter(wide, fsq_config, d_model, rng)
        self.name = "HybridTokenizer"
        log_component_call(logger, self.name, "initialized", {
            "tokens_per_image": self.tokens_per_image,
            "codebook_size": self.codebook_size,
            "parameters": self.num_parameters(),
        })

    @property
    def codebook_size(self) -> int:
        return self.fsq_config.codebook_size

    @property
    def grid_side(self) -> int:
        return self.vit_config.token_side

    @property
    def tokens_per_image(self) -> int:
        return self.grid_side ** 2

    def features(self, images: np.ndarray) -> FeatureGrid:
        """Shared post-STC features consumed by both adapters."""
        return stc_rearrange(self.encoder(images))

    def continuous_embeddings(self, images: np.ndarray) -> Tensor:
        return self.continuous(self.features(images)).data

    def discrete_embeddings(self, images: np.ndarray) -> Tuple[np.ndarray, Tensor]:
        indices, grid = self.discrete(self.features(images))
        return indices, grid.data

    def embed(self, images: np.ndarray, adapter: str) -> Tensor:
        if adapter == "continuous":
            return self.continuous_embeddings(images)
        return self.discrete_embeddings(images)[1]

    def encode_codes(self, images: np.ndarray) -> np.ndarray:
        """Code indices (..., G*G) without recording a graph."""
        with no_grad():
            indices, _ = self.discrete.quantize(self.features(images))
        return indices

    def codebook_usage(self, images: np.ndarray, batch_size: int = 32) -> float:
        """Fraction of the codebook emitted at least once over the images."""
        used = set()
        for start in range(0, len(images), batch_size):
            used.update(np.unique(self.encode_codes(images[start:start + batch_size])).tolist())
        return len(used) / self.codebook_size

    def parameter_groups(self) -> Dict[str, List[Tuple[str, Parameter]]]:
        return {
            "tokenizer.encoder": list(self.encoder.named_parameters("tokenizer.encoder.")),
            "tokenizer.continuous": list(self.continuous.named_parameters("tokenizer.continuous.")),
            "tokenizer.discrete": list(self.discrete.named_parameters("tokenizer.discrete.")),
        }
