"""Vision transformer encoder trained from scratch."""

import numpy as np

from core.nn import Block, Linear, Module, RMSNorm
from core.tensor import Parameter, Tensor, add
from pixel.patches import patchify
from tokenizer.stc import FeatureGrid
from utils.config import ViTConfig
from utils.errors import DimensionError
from utils.logger import setup_logger

logger = setup_logger(__name__)


class VisionEncoder(Module):
    """Patch embedding, learned positions and pre-norm blocks."""

    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        self.config = config
        tokens = config.grid_side ** 2
        self.patch_embed = Linear(config.patch_size * config.patch_size * 3, config.d_vit, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(tokens, config.d_vit)))
        self.blocks = [Block(config.d_vit, config.heads, rng) for _ in range(config.depth)]
        self.norm = RMSNorm(config.d_vit)
        self.name = "VisionEncoder"
        logger.info(f"{self.name} initialized: grid {config.grid_side}x{config.grid_side}, "
                    f"width {config.d_vit}, depth {config.depth}")

    def forward(self, images: np.ndarray) -> FeatureGrid:
        images = np.asarray(images, dtype=np.float32)
        single = images.ndim == 3
        if single:
            images = images[None]
        size = self.config.image_size
        if images.ndim != 4 or images.shape[1:] != (size, size, 3):
            raise DimensionError(f"encoder expects {size}x{size}x3 images, got {images.shape[1:]}")
        x = self.patch_embed(Tensor(patchify(images, self.config.patch_size)))
        x = add(x, self.pos)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        if single:
            x = x.reshape(x.shape[1:])
        return FeatureGrid(x)


def vit_encode(image: np.ndarray, encoder: VisionEncoder) -> FeatureGrid:
    """Encode one H x W x 3 image in [0, 1] into a grid of side image_size / patch_size."""
    return encoder(image)
