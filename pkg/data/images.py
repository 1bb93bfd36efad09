"""Binary PPM (P6) image IO through Pillow."""

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from utils.errors import DimensionError, FormatError

PathLike = Union[str, Path]


def to_uint8(image: np.ndarray, signed: bool = False) -> np.ndarray:
    """Float image to 8-bit; signed images are mapped from [-1, 1], others from [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {image.shape}")
    if signed:
        image = (image + 1.0) * 0.5
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: PathLike, image: np.ndarray, signed: bool = False) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(to_uint8(image, signed=signed)).save(path, format="PPM")
    except OSError as exc:
        raise FormatError(f"cannot write image {path}: {exc}") from exc
    return path


def read_ppm(path: PathLike) -> np.ndarray:
    """H x W x 3 float32 image in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format != "PPM":
                raise FormatError(f"{path} is {img.format}, not a binary PPM")
            data = np.asarray(img.convert("RGB"), dtype=np.float32)
    except FileNotFoundError as exc:
        raise FormatError(f"image not found: {path}") from exc
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return data / 255.0


def contact_sheet(tiles: np.ndarray, columns: int = 4) -> np.ndarray:
    """Arrange N equally sized tiles (N x H x W x 3) into a grid."""
    tiles = np.asarray(tiles)
    n, h, w, c = tiles.shape
    if n % columns:
        raise DimensionError(f"{n} tiles do not fill rows of {columns}")
    rows = n // columns
    grid = tiles.reshape(rows, columns, h, w, c).transpose(0, 2, 1, 3, 4)
    return grid.reshape(rows * h, columns * w, c)
