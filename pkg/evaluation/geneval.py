"""Category-scored prompt following for image generation, checked by the oracle detector."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from data.captions import (
    NUMBER_WORDS,
    RELATIONS,
    CaptionConstraint,
    holds,
    parse_caption,
)
from data.render import render
from data.rng import Pcg32
from data.scenes import GRID, OBJECT_COLORS, SHAPES, SceneObject, SceneSpec, sample_scene
from evaluation.detector import DetectedScene, detect_objects
from utils.errors import ContractError, FormatError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

CATEGORIES = ("single", "two", "counting", "colors", "position", "color_attr")
PROMPTS_PER_CATEGORY = 50
PROMPT_STREAM = 21


class ImageGenerator(Protocol):
    def generate(self, prompt: str, seed: int = 0) -> np.ndarray: ...


class PromptItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    category: str
    prompt: str


class CategoryScores(BaseModel):
    """Satisfied fraction per category; categories without prompts stay None."""

    single: Optional[float] = None
    two: Optional[float] = None
    counting: Optional[float] = None
    colors: Optional[float] = None
    position: Optional[float] = None
    color_attr: Optional[float] = None
    overall: Optional[float] = None

    @classmethod
    def from_outcomes(cls, outcomes: Dict[str, List[bool]]) -> "CategoryScores":
        values = {c: float(np.mean(outcomes[c])) for c in CATEGORIES if outcomes.get(c)}
        overall = float(np.mean(list(values.values()))) if values else None
        return cls(overall=overall, **values)


class PromptOutcome(BaseModel):
    category: str
    prompt: str
    satisfied: bool
    detected: List[Tuple[int, str, str]]


def _prompt_for(category: str, rng: Pcg32) -> str:
    shape_a, shape_b = rng.choice(SHAPES), rng.choice(SHAPES)
    if category == "single":
        return f"a {shape_a}"
    if category == "two":
        return f"a {shape_a} and a {shape_b}"
    if category == "counting":
        return f"{NUMBER_WORDS[2 + rng.randrange(2)]} {shape_a}s"
    if category == "colors":
        return f"a {rng.choice(OBJECT_COLORS)} {shape_a}"
    if category == "position":
        return f"a {shape_a} {rng.choice(RELATIONS)} a {shape_b}"
    if category == "color_attr":
        color_a, color_b = rng.sample(OBJECT_COLORS, 2)
        return f"a {color_a} {shape_a} and a {color_b} {shape_b}"
    raise ContractError(f"unknown category {category!r}")


def build_prompt_set(seed: int = 0, per_category: int = PROMPTS_PER_CATEGORY) -> List[PromptItem]:
    """Stratified prompts drawn from the caption grammar, `per_category` of each category."""
    rng = Pcg32(seed, PROMPT_STREAM)
    items = []
    for category in CATEGORIES:
        for _ in range(per_category):
            text = _prompt_for(category, rng)
            parse_caption(text)
            items.append(PromptItem(category=category, prompt=text))
    return items


def write_prompt_set(items: Sequence[PromptItem], path: Path) -> Path:
    """One `category<TAB>prompt` line per item."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{i.category}\t{i.prompt}\n" for i in items), encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write prompt set {path}: {exc}") from exc
    return path


def read_prompt_set(path: Path) -> List[PromptItem]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read prompt set {path}: {exc}") from exc
    items = []
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        category, sep, prompt = line.partition("\t")
        if not sep or category not in CATEGORIES:
            raise FormatError(f"{path}:{line_no}: expected 'category<TAB>prompt'")
        items.append(PromptItem(category=category, prompt=prompt))
    return items


def realize(constraint: CaptionConstraint, rng: Pcg32, attempts: int = 500) -> SceneSpec:
    """A random scene satisfying the constraint; unconstrained attributes are drawn uniformly."""
    n = len(constraint.objects)
    for _ in range(attempts):
        free_cells = [c for c in range(GRID * GRID) if c not in {o.cell for o in constraint.objects}]
        rng.shuffle(free_cells)
        objects = []
        for spec in constraint.objects:
            cell = spec.cell if spec.cell is not None else free_cells.pop()
            color = spec.color if spec.color is not None else rng.choice(OBJECT_COLORS)
            objects.append(SceneObject(shape=spec.shape, color=color, cell=cell))
        if constraint.relation is not None and not holds(constraint.relation, objects[0], objects[1]):
            continue
        if len({o.cell for o in objects}) == n:
            return SceneSpec(objects=tuple(objects))
    raise ContractError(f"no scene found for constraint {constraint}")


class OracleGenerator:
    """Renders a scene that satisfies the prompt; the upper bound of shape_eval."""

    def __init__(self, resolution: int = 32):
        self.resolution = resolution

    def generate(self, prompt: str, seed: int = 0) -> np.ndarray:
        return render(realize(parse_caption(prompt), Pcg32(seed, 1)), self.resolution)


class RandomSceneGenerator:
    """Ignores the prompt and renders a random scene; the chance baseline."""

    def __init__(self, resolution: int = 32):
        self.resolution = resolution

    def generate(self, prompt: str, seed: int = 0) -> np.ndarray:
        return render(sample_scene(Pcg32(seed, 2)), self.resolution)


def check_prompt(image: np.ndarray, prompt: str) -> Tuple[bool, DetectedScene]:
    detected = detect_objects(image)
    return parse_caption(prompt).is_satisfied_by(detected), detected


def shape_eval(generator: ImageGenerator, prompts: Sequence[PromptItem], seed: int = 0,
               jobs: int = 1, keep_images: int = 0) -> Tuple[CategoryScores, List[PromptOutcome], np.ndarray]:
    """Generate one image per prompt with seed + index, detect, and score per category.

    Returns the scores, the per-prompt outcomes and the first `keep_images` images.
    """
    def run(index: int) -> Tuple[PromptOutcome, np.ndarray]:
        item = prompts[index]
        image = generator.generate(item.prompt, seed=seed + index)
        satisfied, detected = check_prompt(image, item.prompt)
        return PromptOutcome(category=item.category, prompt=item.prompt, satisfied=satisfied,
                             detected=list(detected.canonical())), image

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(len(prompts))))
    else:
        results = [run(i) for i in range(len(prompts))]
    outcomes = [r[0] for r in results]
    grouped: Dict[str, List[bool]] = {c: [] for c in CATEGORIES}
    for outcome in outcomes:
        grouped[outcome.category].append(outcome.satisfied)
    scores = CategoryScores.from_outcomes(grouped)
    images = np.stack([r[1] for r in results[:keep_images]]) if keep_images and results else np.zeros((0,))
    log_component_call(logger, "ShapeEval", "Scored prompts", {
        "prompts": len(prompts), **{k: v for k, v in scores.model_dump().items() if v is not None}})
    return scores, outcomes, images
