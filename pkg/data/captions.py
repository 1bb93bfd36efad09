"""Template caption grammar and its parser.

Four caption forms are produced and parsed:

* located list  - "a red circle in the top left and a blue square in the center"
* bare list     - "a circle and a blue square" (colour optional per object)
* count         - "two squares", "three red circles"
* relational    - "a red circle left of a square" (exactly two objects)

Parsing yields a `CaptionConstraint`, which checks a scene by injective matching
of constrained objects to scene objects; the object count must match exactly.
"""

import itertools
import re
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from data.rng import Pcg32
from data.scenes import CELL_NAMES, OBJECT_COLORS, SHAPES, SceneObject, SceneSpec
from utils.errors import CaptionParseError, ContractError

NUMBER_WORDS = ("zero", "one", "two", "three")
RELATIONS = ("left of", "right of", "above", "below")
FORMS = ("located", "list", "count", "relation")

_COLOR = "|".join(OBJECT_COLORS)
_SHAPE = "|".join(SHAPES)
_CELL = "|".join(CELL_NAMES)
_REL = "|".join(RELATIONS)

_OBJECT_RE = re.compile(rf"^a (?:({_COLOR}) )?({_SHAPE})(?: in the ({_CELL}))?$")
_COUNT_RE = re.compile(rf"^(two|three) (?:({_COLOR}) )?({_SHAPE})s$")
_RELATION_RE = re.compile(rf"^a (?:({_COLOR}) )?({_SHAPE}) ({_REL}) a (?:({_COLOR}) )?({_SHAPE})$")


class ObjectConstraint(BaseModel):
    model_config = ConfigDict(frozen=True)

    shape: str
    color: Optional[str] = None
    cell: Optional[int] = None

    def matches(self, obj: SceneObject) -> bool:
        return (obj.shape == self.shape
                and (self.color is None or obj.color == self.color)
                and (self.cell is None or obj.cell == self.cell))


class CaptionConstraint(BaseModel):
    """What a caption requires of a scene."""

    model_config = ConfigDict(frozen=True)

    form: str
    objects: Tuple[ObjectConstraint, ...]
    relation: Optional[str] = None

    def is_satisfied_by(self, spec: SceneSpec) -> bool:
        if len(spec.objects) != len(self.objects):
            return False
        for perm in itertools.permutations(spec.objects):
            if all(c.matches(o) for c, o in zip(self.objects, perm)):
                if self.relation is None or holds(self.relation, perm[0], perm[1]):
                    return True
        return False

    def to_scene(self) -> SceneSpec:
        """The unique scene of a fully located caption."""
        if any(c.color is None or c.cell is None for c in self.objects):
            raise ContractError("only captions naming every colour and cell describe a unique scene")
        return SceneSpec(objects=tuple(SceneObject(shape=c.shape, color=c.color, cell=c.cell) for c in self.objects))


def holds(relation: str, a: SceneObject, b: SceneObject) -> bool:
    if relation == "left of":
        return a.col < b.col
    if relation == "right of":
        return a.col > b.col
    if relation == "above":
        return a.row < b.row
    if relation == "below":
        return a.row > b.row
    raise ContractError(f"unknown relation {relation!r}")


def relations_between(a: SceneObject, b: SceneObject) -> List[str]:
    return [r for r in RELATIONS if holds(r, a, b)]


def noun_phrase(obj: SceneObject, with_color: bool = True, with_cell: bool = False) -> str:
    words = ["a"]
    if with_color:
        words.append(obj.color)
    words.append(obj.shape)
    phrase = " ".join(words)
    if with_cell:
        phrase += f" in the {obj.cell_name}"
    return phrase


def located_caption(spec: SceneSpec) -> str:
    return " and ".join(noun_phrase(o, with_color=True, with_cell=True) for o in spec.objects)


def list_caption(spec: SceneSpec, colors: Sequence[bool]) -> str:
    return " and ".join(noun_phrase(o, with_color=c) for o, c in zip(spec.objects, colors))


def count_caption(spec: SceneSpec, with_color: bool) -> str:
    shapes = {o.shape for o in spec.objects}
    colors = {o.color for o in spec.objects}
    n = len(spec.objects)
    if n < 2 or len(shapes) != 1:
        raise ContractError("count captions need two or more objects of one shape")
    if with_color and len(colors) != 1:
        raise ContractError("a coloured count caption needs objects of one colour")
    words = [NUMBER_WORDS[n]]
    if with_color:
        words.append(spec.objects[0].color)
    words.append(f"{spec.objects[0].shape}s")
    return " ".join(words)


def relation_caption(a: SceneObject, b: SceneObject, relation: str,
                     color_a: bool = True, color_b: bool = True) -> str:
    if not holds(relation, a, b):
        raise ContractError(f"relation {relation!r} does not hold between cells {a.cell} and {b.cell}")
    return f"{noun_phrase(a, color_a)} {relation} {noun_phrase(b, color_b)}"


def applicable_forms(spec: SceneSpec) -> List[str]:
    forms = ["located", "list"]
    if len(spec.objects) >= 2 and len({o.shape for o in spec.objects}) == 1:
        forms.append("count")
    if len(spec.objects) == 2:
        forms.append("relation")
    return forms


def caption_in_form(spec: SceneSpec, form: str, rng: Pcg32) -> str:
    if form == "located":
        return located_caption(spec)
    if form == "list":
        return list_caption(spec, [rng.bernoulli(0.5) for _ in spec.objects])
    if form == "count":
        same_color = len({o.color for o in spec.objects}) == 1
        return count_caption(spec, with_color=same_color and rng.bernoulli(0.5))
    if form == "relation":
        a, b = rng.sample(spec.objects, 2)
        relation = rng.choice(relations_between(a, b))
        return relation_caption(a, b, relation, rng.bernoulli(0.5), rng.bernoulli(0.5))
    raise ContractError(f"unknown caption form {form!r}")


def caption(spec: SceneSpec, rng: Pcg32) -> str:
    """Caption in a form drawn uniformly from those applicable to the scene."""
    return caption_in_form(spec, rng.choice(applicable_forms(spec)), rng)


def parse_caption(text: str) -> CaptionConstraint:
    """Parse any caption the grammar emits; anything else raises CaptionParseError."""
    if not isinstance(text, str):
        raise CaptionParseError(f"caption must be text, got {type(text).__name__}")
    normalized = " ".join(text.strip().lower().rstrip(".").split())
    if not normalized:
        raise CaptionParseError("empty caption")

    match = _COUNT_RE.match(normalized)
    if match:
        n = NUMBER_WORDS.index(match.group(1))
        obj = ObjectConstraint(shape=match.group(3), color=match.group(2))
        return CaptionConstraint(form="count", objects=(obj,) * n)

    match = _RELATION_RE.match(normalized)
    if match:
        a = ObjectConstraint(shape=match.group(2), color=match.group(1))
        b = ObjectConstraint(shape=match.group(5), color=match.group(4))
        return CaptionConstraint(form="relation", objects=(a, b), relation=match.group(3))

    parts = normalized.split(" and ")
    if len(parts) > 3:
        raise CaptionParseError(f"caption names {len(parts)} objects; at most 3 are allowed: {text!r}")
    objects = []
    for part in parts:
        match = _OBJECT_RE.match(part)
        if not match:
            raise CaptionParseError(f"cannot parse {part!r} in caption {text!r}")
        cell = CELL_NAMES.index(match.group(3)) if match.group(3) else None
        objects.append(ObjectConstraint(shape=match.group(2), color=match.group(1), cell=cell))
    located = [o.cell is not None for o in objects]
    if any(located) and not all(located):
        raise CaptionParseError(f"caption mixes located and unlocated objects: {text!r}")
    cells = [o.cell for o in objects if o.cell is not None]
    if len(set(cells)) != len(cells):
        raise CaptionParseError(f"caption places two objects in one cell: {text!r}")
    return CaptionConstraint(form="located" if all(located) else "list", objects=tuple(objects))
