"""Question/answer pairs with an exact symbolic oracle."""

import re
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from data.captions import NUMBER_WORDS
from data.rng import Pcg32
from data.scenes import CELL_NAMES, OBJECT_COLORS, SHAPES, SceneSpec
from utils.errors import CaptionParseError, ContractError

QA_KINDS = ("color-of", "count-of", "position-of", "shape-at")

_COLOR = "|".join(OBJECT_COLORS)
_SHAPE = "|".join(SHAPES)
_CELL = "|".join(CELL_NAMES)

_COLOR_OF = re.compile(rf"^what color is the ({_SHAPE})\?$")
_COUNT_OF = re.compile(rf"^how many ({_SHAPE})s\?$")
_POSITION_OF = re.compile(rf"^where is the ({_COLOR}) ({_SHAPE})\?$")
_SHAPE_AT = re.compile(rf"^what shape is in the ({_CELL})\?$")


class QAPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    question: str
    answer: str
    kind: str


def _color_of_targets(spec: SceneSpec) -> List[str]:
    return [s for s in SHAPES if spec.count(s) == 1]


def _position_of_targets(spec: SceneSpec) -> List[Tuple[str, str]]:
    return [(o.color, o.shape) for o in spec.objects if spec.count(o.shape, o.color) == 1]


def _shape_at_targets(spec: SceneSpec) -> List[int]:
    return sorted(o.cell for o in spec.objects)


def applicable_kinds(spec: SceneSpec) -> List[str]:
    kinds = []
    if _color_of_targets(spec):
        kinds.append("color-of")
    kinds.append("count-of")
    if _position_of_targets(spec):
        kinds.append("position-of")
    kinds.append("shape-at")
    return kinds


def question_for(kind: str, spec: SceneSpec, rng: Pcg32) -> str:
    if kind == "color-of":
        return f"what color is the {rng.choice(_color_of_targets(spec))}?"
    if kind == "count-of":
        return f"how many {rng.choice(SHAPES)}s?"
    if kind == "position-of":
        color, shape = rng.choice(_position_of_targets(spec))
        return f"where is the {color} {shape}?"
    if kind == "shape-at":
        return f"what shape is in the {CELL_NAMES[rng.choice(_shape_at_targets(spec))]}?"
    raise ContractError(f"unknown question kind {kind!r}")


def qa_pair(spec: SceneSpec, rng: Pcg32, kind: Optional[str] = None) -> QAPair:
    """Kind uniform over the applicable kinds unless given; the answer comes from the oracle."""
    kinds = applicable_kinds(spec)
    if kind is None:
        kind = rng.choice(kinds)
    elif kind not in kinds:
        raise ContractError(f"question kind {kind!r} does not apply to this scene")
    question = question_for(kind, spec, rng)
    return QAPair(question=question, answer=oracle_answer(spec, question), kind=kind)


def _answer_color(spec: SceneSpec, shape: str) -> str:
    matches = [o for o in spec.objects if o.shape == shape]
    if len(matches) != 1:
        raise ContractError(f"colour question about {shape!r} is ambiguous for this scene")
    return matches[0].color


def _answer_position(spec: SceneSpec, color: str, shape: str) -> str:
    matches = [o for o in spec.objects if o.shape == shape and o.color == color]
    if len(matches) != 1:
        raise ContractError(f"position question about a {color} {shape} is ambiguous for this scene")
    return matches[0].cell_name


def _answer_shape(spec: SceneSpec, cell_name: str) -> str:
    obj = spec.at(CELL_NAMES.index(cell_name))
    if obj is None:
        raise ContractError(f"no object in the {cell_name}")
    return obj.shape


_RULES: Dict[str, Tuple[re.Pattern, Callable[..., str]]] = {
    "color-of": (_COLOR_OF, _answer_color),
    "count-of": (_COUNT_OF, lambda spec, shape: NUMBER_WORDS[spec.count(shape)]),
    "position-of": (_POSITION_OF, _answer_position),
    "shape-at": (_SHAPE_AT, _answer_shape),
}


def question_kind(question: str) -> str:
    for kind, (pattern, _) in _RULES.items():
        if pattern.match(question.strip().lower()):
            return kind
    raise CaptionParseError(f"question does not follow the grammar: {question!r}")


def oracle_answer(spec: SceneSpec, question: str) -> str:
    """Answer a grammar question exactly from the scene."""
    normalized = question.strip().lower()
    for pattern, rule in _RULES.values():
        match = pattern.match(normalized)
        if match:
            return rule(spec, *match.groups())
    raise CaptionParseError(f"question does not follow the grammar: {question!r}")


def normalize_answer(text: str) -> str:
    return " ".join(text.strip().lower().split())
