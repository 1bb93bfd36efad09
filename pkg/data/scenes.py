"""Scene specifications: shapes, colours and 3x3 grid cells."""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

from data.rng import Pcg32

SHAPES = ("circle", "square", "triangle")

# The eight corners of the RGB cube; white is the background.
PALETTE: Dict[str, Tuple[int, int, int]] = {
    "black": (0, 0, 0),
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "white": (255, 255, 255),
}
BACKGROUND = "white"
OBJECT_COLORS = tuple(name for name in PALETTE if name != BACKGROUND)

CELL_NAMES = (
    "top left", "top middle", "top right",
    "middle left", "center", "middle right",
    "bottom left", "bottom middle", "bottom right",
)
GRID = 3

COUNT_WEIGHTS = (0.4, 0.4, 0.2)


class SceneObject(BaseModel):
    model_config = ConfigDict(frozen=True)

    shape: str
    color: str
    cell: int

    @field_validator("shape")
    @classmethod
    def _known_shape(cls, shape: str) -> str:
        if shape not in SHAPES:
            raise ValueError(f"unknown shape {shape!r}")
        return shape

    @field_validator("color")
    @classmethod
    def _object_color(cls, color: str) -> str:
        if color not in OBJECT_COLORS:
            raise ValueError(f"{color!r} is not an object colour")
        return color

    @field_validator("cell")
    @classmethod
    def _cell_range(cls, cell: int) -> int:
        if not 0 <= cell < GRID * GRID:
            raise ValueError(f"cell {cell} outside the 3x3 grid")
        return cell

    @property
    def row(self) -> int:
        return self.cell // GRID

    @property
    def col(self) -> int:
        return self.cell % GRID

    @property
    def cell_name(self) -> str:
        return CELL_NAMES[self.cell]


class SceneSpec(BaseModel):
    """Exact symbolic description of one image: 1-3 objects in distinct cells."""

    model_config = ConfigDict(frozen=True)

    objects: Tuple[SceneObject, ...]

    @field_validator("objects")
    @classmethod
    def _valid_objects(cls, objects: Tuple[SceneObject, ...]) -> Tuple[SceneObject, ...]:
        if not 1 <= len(objects) <= 3:
            raise ValueError(f"a scene holds 1-3 objects, got {len(objects)}")
        cells = [o.cell for o in objects]
        if len(set(cells)) != len(cells):
            raise ValueError(f"objects share a cell: {cells}")
        return objects

    def canonical(self) -> Tuple[Tuple[int, str, str], ...]:
        """Order-free key: (cell, shape, colour) sorted by cell."""
        return tuple(sorted((o.cell, o.shape, o.color) for o in self.objects))

    def count(self, shape: str, color: Optional[str] = None) -> int:
        return sum(1 for o in self.objects if o.shape == shape and (color is None or o.color == color))

    def at(self, cell: int) -> Optional[SceneObject]:
        for o in self.objects:
            if o.cell == cell:
                return o
        return None

    def to_record(self) -> List[Dict[str, object]]:
        return [{"shape": o.shape, "color": o.color, "cell": o.cell} for o in self.objects]

    @classmethod
    def from_record(cls, record: List[Dict[str, object]]) -> "SceneSpec":
        return cls(objects=tuple(SceneObject(**item) for item in record))


def sample_scene(rng: Pcg32) -> SceneSpec:
    """Object count from COUNT_WEIGHTS; cells without replacement; attributes uniform."""
    n = rng.categorical(COUNT_WEIGHTS) + 1
    cells = rng.sample(range(GRID * GRID), n)
    objects = []
    for cell in cells:
        shape = SHAPES[rng.randrange(len(SHAPES))]
        color = OBJECT_COLORS[rng.randrange(len(OBJECT_COLORS))]
        objects.append(SceneObject(shape=shape, color=color, cell=cell))
    return SceneSpec(objects=tuple(objects))
