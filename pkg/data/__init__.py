"""Synthetic shapes corpus: scenes, rendering, captions, QA and the char tokenizer."""

from .captions import CaptionConstraint, ObjectConstraint, caption, parse_caption
from .corpus import Corpus, CorpusRecord, build_splits, read_corpus, write_corpus
from .images import read_ppm, write_ppm
from .qa import QA_KINDS, QAPair, oracle_answer, qa_pair
from .render import render
from .rng import Pcg32
from .scenes import CELL_NAMES, OBJECT_COLORS, PALETTE, SHAPES, SceneObject, SceneSpec, sample_scene
from .text import ALPHABET, V_TEXT, text_detokenize, text_tokenize

__all__ = [
    "ALPHABET",
    "CELL_NAMES",
    "CaptionConstraint",
    "Corpus",
    "CorpusRecord",
    "OBJECT_COLORS",
    "ObjectConstraint",
    "PALETTE",
    "Pcg32",
    "QAPair",
    "QA_KINDS",
    "SHAPES",
    "SceneObject",
    "SceneSpec",
    "V_TEXT",
    "build_splits",
    "caption",
    "oracle_answer",
    "parse_caption",
    "qa_pair",
    "read_corpus",
    "read_ppm",
    "render",
    "sample_scene",
    "text_detokenize",
    "text_tokenize",
    "write_corpus",
    "write_ppm",
]
