"""Captioned scene corpora: generation, JSONL persistence and in-memory access.

Every scene has its own source size, the side of the square image it was
captured at. `Corpus.images` holds one uniform working rendition of all scenes;
the source sizes decide which scenes a resolution-limited stage may use.
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from data.captions import caption
from data.images import read_ppm, write_ppm
from data.qa import QAPair, qa_pair
from data.render import render
from data.rng import Pcg32
from data.scenes import SceneSpec, sample_scene
from utils.errors import FormatError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

TRAIN_STREAM = 0
EVAL_STREAM = 1
SOURCE_SIZE_STREAM = 16


class CorpusRecord(BaseModel):
    """One line of corpus.jsonl."""

    scene: List[Dict[str, Any]]
    caption: str
    qa: QAPair
    image_path: str
    source_size: int = Field(ge=12)

    def spec(self) -> SceneSpec:
        return SceneSpec.from_record(self.scene)

    def pair_key(self) -> Tuple[tuple, str]:
        return self.spec().canonical(), self.qa.question

    @property
    def source_shape(self) -> Tuple[int, int, int]:
        return self.source_size, self.source_size, 3


class Corpus:
    """Records plus their working-resolution images, kept in memory."""

    def __init__(self, records: List[CorpusRecord], images: np.ndarray, name: str = "corpus"):
        self.name = name
        self.records = records
        self.images = images
        self.specs = [r.spec() for r in records]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CorpusRecord]:
        return iter(self.records)

    @property
    def resolution(self) -> int:
        return int(self.images.shape[1])

    @property
    def source_shapes(self) -> List[Tuple[int, int, int]]:
        return [r.source_shape for r in self.records]

    def subset(self, indices: List[int]) -> "Corpus":
        return Corpus([self.records[i] for i in indices], self.images[indices], name=self.name)

    def text_sample(self, index: int, rng: Pcg32) -> str:
        """Text-only training string: a caption or a question with its answer."""
        record = self.records[index]
        if rng.bernoulli(0.5):
            return record.caption
        return f"{record.qa.question} {record.qa.answer}"


def generate_records(seed: int, size: int, stream: int, prefix: str,
                     exclude: Optional[Set[Tuple[tuple, str]]] = None,
                     max_attempts: Optional[int] = None,
                     source_sizes: Sequence[int] = (48,)) -> List[CorpusRecord]:
    """Deterministic records from (seed, stream); pairs in `exclude` are skipped.

    Source sizes come from a stream of their own, so the scenes themselves do
    not depend on `source_sizes`.
    """
    rng = Pcg32(seed, stream)
    size_rng = Pcg32(seed, SOURCE_SIZE_STREAM + stream)
    records: List[CorpusRecord] = []
    attempts = 0
    limit = max_attempts if max_attempts is not None else 50 * max(size, 1)
    while len(records) < size and attempts < limit:
        attempts += 1
        spec = sample_scene(rng)
        text = caption(spec, rng)
        qa = qa_pair(spec, rng)
        record = CorpusRecord(scene=spec.to_record(), caption=text, qa=qa,
                              image_path=f"images/{prefix}-{len(records):05d}.ppm",
                              source_size=int(size_rng.choice(list(source_sizes))))
        if exclude is not None and record.pair_key() in exclude:
            continue
        records.append(record)
    if len(records) < size:
        logger.warning(f"Only {len(records)} of {size} records generated after {attempts} attempts")
    return records


def render_images(records: List[CorpusRecord], resolution: int) -> np.ndarray:
    return np.stack([render(r.spec(), resolution) for r in records]) if records else \
        np.zeros((0, resolution, resolution, 3), dtype=np.float32)


def build_splits(seed: int, train_size: int, eval_size: int, resolution: int,
                 source_sizes: Optional[Sequence[int]] = None) -> Tuple[Corpus, Corpus]:
    """Train and held-out eval corpora; eval never repeats a training (scene, question) pair.

    Without `source_sizes` every scene is sourced at `resolution`.
    """
    sizes = tuple(source_sizes) if source_sizes else (resolution,)
    train = generate_records(seed, train_size, TRAIN_STREAM, "train", source_sizes=sizes)
    seen = {r.pair_key() for r in train}
    held_out = generate_records(seed, eval_size, EVAL_STREAM, "eval", exclude=seen, source_sizes=sizes)
    log_component_call(logger, "Corpus", "Generated splits", {
        "seed": seed, "train": len(train), "eval": len(held_out), "resolution": resolution,
        "source_sizes": list(sizes)})
    return (Corpus(train, render_images(train, resolution), name="train"),
            Corpus(held_out, render_images(held_out, resolution), name="eval"))


def source_image(record: CorpusRecord, working: np.ndarray) -> np.ndarray:
    """The record's image at its source size, reusing the working rendition when the sizes agree."""
    if working.shape[0] == record.source_size:
        return working
    return render(record.spec(), record.source_size)


def write_corpus(corpus: Corpus, out_dir: Path) -> Path:
    """Write `<name>.jsonl` and source-size PPM images under out_dir."""
    out_dir = Path(out_dir)
    path = out_dir / f"{corpus.name}.jsonl"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for record, image in zip(corpus.records, corpus.images):
                write_ppm(out_dir / record.image_path, source_image(record, image))
                f.write(json.dumps(record.model_dump(mode="json"), sort_keys=True) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write corpus {path}: {exc}") from exc
    return path


def read_corpus(path: Path, name: Optional[str] = None, resolution: Optional[int] = None) -> Corpus:
    """Records and their images at `resolution`.

    A PPM whose size matches `resolution` is used as stored; other scenes are
    rendered again at `resolution`. Without `resolution` every record must share
    one source size.
    """
    path = Path(path)
    records: List[CorpusRecord] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    records.append(CorpusRecord.model_validate(json.loads(line)))
                except (json.JSONDecodeError, ValidationError) as exc:
                    raise FormatError(f"{path}:{line_no}: malformed corpus record: {exc}") from exc
    except FileNotFoundError as exc:
        raise FormatError(f"corpus not found: {path}") from exc
    except OSError as exc:
        raise FormatError(f"cannot read corpus {path}: {exc}") from exc
    if resolution is None:
        sizes = {r.source_size for r in records}
        if len(sizes) > 1:
            raise FormatError(f"{path}: mixed source sizes {sorted(sizes)}; pass a working resolution")
        resolution = sizes.pop() if sizes else 48
    images = []
    for record in records:
        stored = read_ppm(path.parent / record.image_path)
        if stored.shape[:2] != (record.source_size, record.source_size):
            raise FormatError(f"{record.image_path}: image is {stored.shape[1]}x{stored.shape[0]}, "
                              f"record says {record.source_size}")
        images.append(stored if record.source_size == resolution else render(record.spec(), resolution))
    stacked = np.stack(images).astype(np.float32) if images else \
        np.zeros((0, resolution, resolution, 3), dtype=np.float32)
    return Corpus(records, stacked, name=name or path.stem)
