"""Oracle object detector for palette-coloured shape scenes."""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy import ndimage

from data.render import shape_mask
from data.scenes import BACKGROUND, GRID, PALETTE, SHAPES, SceneObject, SceneSpec
from utils.errors import DimensionError

MIN_AREA = 8
SUPPORTED_RESOLUTIONS = (32, 48)

_NAMES = tuple(PALETTE)
_COLORS = np.asarray([PALETTE[name] for name in _NAMES], dtype=np.float32) / 255.0
_BACKGROUND_LABEL = _NAMES.index(BACKGROUND)
# 4-neighbourhood
_STRUCTURE = ndimage.generate_binary_structure(2, 1)


class DetectedScene(BaseModel):
    """Objects recovered from pixels; cells may repeat when a generator misplaces shapes."""

    model_config = ConfigDict(frozen=True)

    objects: Tuple[SceneObject, ...] = ()

    def canonical(self) -> Tuple[Tuple[int, str, str], ...]:
        return tuple(sorted((o.cell, o.shape, o.color) for o in self.objects))

    def to_spec(self) -> Optional[SceneSpec]:
        """The detected objects as a valid scene, or None if they do not form one."""
        try:
            return SceneSpec(objects=self.objects)
        except ValidationError:
            return None

    def matches(self, spec: SceneSpec) -> bool:
        return self.canonical() == spec.canonical()


def nearest_palette(image: np.ndarray) -> np.ndarray:
    """Per-pixel index into PALETTE of the nearest colour."""
    pixels = np.asarray(image, dtype=np.float32)[..., None, :]
    return np.argmin(((pixels - _COLORS) ** 2).sum(axis=-1), axis=-1)


def classify_shape(component: np.ndarray, cell: int, resolution: int) -> str:
    """Reference shape whose mask in `cell` overlaps the component best (IoU)."""
    best, best_iou = SHAPES[0], -1.0
    for shape in SHAPES:
        reference = shape_mask(shape, cell, resolution)
        union = np.logical_or(component, reference).sum()
        iou = np.logical_and(component, reference).sum() / union if union else 0.0
        if iou > best_iou:
            best, best_iou = shape, iou
    return best


def centroid_cell(component: np.ndarray, resolution: int) -> int:
    ys, xs = np.nonzero(component)
    size = resolution / GRID
    # pixel centres sit at index + 0.5
    row = min(int((ys.mean() + 0.5) / size), GRID - 1)
    col = min(int((xs.mean() + 0.5) / size), GRID - 1)
    return row * GRID + col


def detect_objects(image: np.ndarray) -> DetectedScene:
    """Nearest-palette labelling, 4-connected components of area >= 8, IoU shape match."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != image.shape[1] or image.shape[2] != 3:
        raise DimensionError(f"detector expects a square R x R x 3 image, got {image.shape}")
    resolution = image.shape[0]
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise DimensionError(f"detector supports {SUPPORTED_RESOLUTIONS} px, got {resolution}")
    labels = nearest_palette(image)
    found: List[Tuple[int, str, str]] = []
    for index, color in enumerate(_NAMES):
        if index == _BACKGROUND_LABEL:
            continue
        components, count = ndimage.label(labels == index, structure=_STRUCTURE)
        for k in range(1, count + 1):
            component = components == k
            if component.sum() < MIN_AREA:
                continue
            cell = centroid_cell(component, resolution)
            found.append((cell, classify_shape(component, cell, resolution), color))
    found.sort()
    return DetectedScene(objects=tuple(SceneObject(shape=s, color=c, cell=cell) for cell, s, c in found))
