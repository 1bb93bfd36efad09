"""Exact-match question answering accuracy per question kind."""

from collections import Counter
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np
from pydantic import BaseModel

from data.corpus import Corpus
from data.qa import QA_KINDS, normalize_answer, oracle_answer, question_kind
from evaluation.detector import detect_objects
from utils.errors import ContractError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)


class Answerer(Protocol):
    def answer(self, image: np.ndarray, question: str) -> str: ...


class UnderstandingScores(BaseModel):
    per_kind: Dict[str, float]
    counts: Dict[str, int]
    overall: Optional[float] = None


class DetectorAnswerer:
    """Answers from the scene the oracle detector recovers; scores 1.0 on rendered scenes."""

    def answer(self, image: np.ndarray, question: str) -> str:
        spec = detect_objects(image).to_spec()
        if spec is None:
            return ""
        try:
            return oracle_answer(spec, question)
        except ContractError:
            return ""


class MajorityAnswerer:
    """Always gives the most frequent training answer for the question kind."""

    def __init__(self, corpus: Corpus):
        tallies: Dict[str, Counter] = {}
        for record in corpus.records:
            tallies.setdefault(record.qa.kind, Counter())[record.qa.answer] += 1
        self.answers = {kind: tally.most_common(1)[0][0] for kind, tally in tallies.items()}

    def answer(self, image: np.ndarray, question: str) -> str:
        return self.answers.get(question_kind(question), "")


def understanding_eval(answerer: Answerer, corpus: Corpus, limit: Optional[int] = None) -> UnderstandingScores:
    """Exact match after whitespace normalization, per kind and example-weighted overall."""
    indices: Sequence[int] = range(len(corpus)) if limit is None else range(min(limit, len(corpus)))
    hits: Dict[str, List[bool]] = {kind: [] for kind in QA_KINDS}
    for i in indices:
        record = corpus.records[i]
        predicted = answerer.answer(corpus.images[i], record.qa.question)
        hits[record.qa.kind].append(normalize_answer(predicted) == normalize_answer(record.qa.answer))
    per_kind = {kind: float(np.mean(v)) for kind, v in hits.items() if v}
    counts = {kind: len(v) for kind, v in hits.items()}
    total = sum(counts.values())
    overall = sum(sum(v) for v in hits.values()) / total if total else None
    scores = UnderstandingScores(per_kind=per_kind, counts=counts, overall=overall)
    log_component_call(logger, "UnderstandingEval", "Scored questions",
                       {"overall": overall, "counts": counts, "per_kind": per_kind})
    return scores
