"""Pixel-space FSQ autoencoder over STC-grouped raw patches.

Stands in for a separately trained generation tokenizer: it sees only pixels,
learns a spatial reconstruction objective and shares nothing with the hybrid
tokenizer's encoder. Its codes and linear decoder back the dual-encoder
ablation variant.
"""

from typing import Dict, List, Tuple

import numpy as np

from core.nn import MLP, Linear, Module
from core.ops import mse_loss
from core.tensor import Parameter, Tensor, no_grad
from data.render import from_signed, to_signed
from pixel.patches import patchify, unpatchify
from tokenizer.fsq import FSQ
from tokenizer.stc import FeatureGrid, stc_inverse, stc_rearrange
from utils.config import STC_BLOCK, FSQConfig
from utils.errors import DimensionError


class PatchQuantizer(Module):
    def __init__(self, image_size: int, patch_size: int, fsq_config: FSQConfig, hidden: int = 128, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        self.patch_size = patch_size
        self.hidden = hidden
        self.fsq = FSQ(fsq_config)
        grid = image_size // patch_size
        if grid % STC_BLOCK:
            raise DimensionError(f"patch grid side {grid} is not divisible by the STC block {STC_BLOCK}")
        wide = STC_BLOCK * STC_BLOCK * patch_size * patch_size * 3
        self.encoder = MLP(wide, hidden, self.fsq.channels, rng)
        self.decoder = Linear(self.fsq.channels, wide, rng)
        self.name = "PatchQuantizer"

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size // STC_BLOCK

    def _grouped_patches(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=np.float32)
        if images.shape[-3:] != (self.image_size, self.image_size, 3):
            raise DimensionError(f"quantizer expects {self.image_size}px images, got {images.shape}")
        return stc_rearrange(FeatureGrid(Tensor(patchify(to_signed(images), self.patch_size)))).data

    def quantize(self, images: np.ndarray) -> Tuple[np.ndarray, Tensor]:
        codes, quantized = self.fsq.quantize(self.encoder(self._grouped_patches(images)))
        return self.fsq.to_index(codes), quantized

    def _decode_values(self, quantized: Tensor) -> Tensor:
        return stc_inverse(FeatureGrid(self.decoder(quantized))).data

    def reconstruction_loss(self, images: np.ndarray) -> Tensor:
        _, quantized = self.quantize(images)
        target = patchify(to_signed(np.asarray(images, dtype=np.float32)), self.patch_size)
        return mse_loss(self._decode_values(quantized), Tensor(target))

    def encode_codes(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            indices, _ = self.quantize(images)
        return indices

    def decode(self, indices: np.ndarray) -> np.ndarray:
        """Images in [0, 1] from code indices of shape (..., G*G)."""
        with no_grad():
            values = self._decode_values(Tensor(self.fsq.dequantize(indices)))
        return from_signed(unpatchify(np.clip(values.data, -1.0, 1.0), self.patch_size))

    def parameter_groups(self) -> Dict[str, List[Tuple[str, Parameter]]]:
        return {"proxy": list(self.named_parameters("proxy."))}
