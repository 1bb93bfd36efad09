"""Row-major patchify/unpatchify between images and patch tokens."""

import math

import numpy as np

from utils.errors import DimensionError


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """(..., H, W, C) -> (..., (H/p)*(W/p), p*p*C), patches in row-major order."""
    image = np.asarray(image)
    if image.ndim < 3:
        raise DimensionError(f"expected (..., H, W, C), got {image.shape}")
    *lead, h, w, c = image.shape
    if h % patch_size or w % patch_size:
        raise DimensionError(f"image {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(*lead, gh, patch_size, gw, patch_size, c)
    k = len(lead)
    x = x.transpose(*range(k), k, k + 2, k + 1, k + 3, k + 4)
    return np.ascontiguousarray(x.reshape(*lead, gh * gw, patch_size * patch_size * c))


def unpatchify(tokens: np.ndarray, patch_size: int, channels: int = 3) -> np.ndarray:
    """Inverse of patchify for square images."""
    tokens = np.asarray(tokens)
    *lead, n, dim = tokens.shape
    side = math.isqrt(n)
    if side * side != n:
        raise DimensionError(f"{n} patches do not form a square image")
    if dim != patch_size * patch_size * channels:
        raise DimensionError(f"patch dim {dim} != {patch_size}*{patch_size}*{channels}")
    x = tokens.reshape(*lead, side, side, patch_size, patch_size, channels)
    k = len(lead)
    x = x.transpose(*range(k), k, k + 2, k + 1, k + 3, k + 4)
    return np.ascontiguousarray(x.reshape(*lead, side * patch_size, side * patch_size, channels))
