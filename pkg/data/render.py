"""Exact rasteriser for scene specifications (no anti-aliasing)."""

from functools import lru_cache
from typing import Tuple

import numpy as np

from data.scenes import BACKGROUND, GRID, PALETTE, SceneSpec
from utils.errors import DimensionError

RADIUS_FRACTION = 0.35
MIN_RESOLUTION = 12


def cell_geometry(cell: int, resolution: int) -> Tuple[float, float, float]:
    """Centre x, centre y and radius in pixels for a grid cell."""
    size = resolution / GRID
    row, col = divmod(cell, GRID)
    return (col + 0.5) * size, (row + 0.5) * size, RADIUS_FRACTION * size


@lru_cache(maxsize=256)
def shape_mask(shape: str, cell: int, resolution: int) -> np.ndarray:
    """Boolean R x R mask of a filled shape, tested at pixel centres."""
    cx, cy, r = cell_geometry(cell, resolution)
    centres = np.arange(resolution, dtype=np.float64) + 0.5
    x, y = np.meshgrid(centres, centres)
    if shape == "circle":
        mask = (x - cx) ** 2 + (y - cy) ** 2 <= r * r
    elif shape == "square":
        mask = (np.abs(x - cx) <= r) & (np.abs(y - cy) <= r)
    elif shape == "triangle":
        mask = _inside_triangle(x, y, (cx, cy - r), (cx - r, cy + r), (cx + r, cy + r))
    else:
        raise DimensionError(f"no mask for shape {shape!r}")
    mask.setflags(write=False)
    return mask


def _inside_triangle(x: np.ndarray, y: np.ndarray, a, b, c) -> np.ndarray:
    # barycentric coordinates of every pixel centre
    (ax, ay), (bx, by), (cx, cy) = a, b, c
    det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    l1 = ((by - cy) * (x - cx) + (cx - bx) * (y - cy)) / det
    l2 = ((cy - ay) * (x - cx) + (ax - cx) * (y - cy)) / det
    l3 = 1.0 - l1 - l2
    return (l1 >= 0) & (l2 >= 0) & (l3 >= 0)


def render(spec: SceneSpec, resolution: int) -> np.ndarray:
    """R x R x 3 float32 image in [0, 1] on a white background."""
    if resolution < MIN_RESOLUTION:
        raise DimensionError(f"resolution {resolution} below the minimum {MIN_RESOLUTION}")
    image = np.empty((resolution, resolution, 3), dtype=np.float32)
    image[...] = np.asarray(PALETTE[BACKGROUND], dtype=np.float32) / 255.0
    for obj in spec.objects:
        mask = shape_mask(obj.shape, obj.cell, resolution)
        image[mask] = np.asarray(PALETTE[obj.color], dtype=np.float32) / 255.0
    return image


def to_signed(image: np.ndarray) -> np.ndarray:
    """[0, 1] pixels to the [-1, 1] range used by the pixel decoder."""
    return (image * 2.0 - 1.0).astype(np.float32)


def from_signed(image: np.ndarray) -> np.ndarray:
    return np.clip((image + 1.0) * 0.5, 0.0, 1.0).astype(np.float32)
