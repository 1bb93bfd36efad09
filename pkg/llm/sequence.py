"""Mixed token/embedding sequences with next-token targets, modality tags and loss masks."""

from typing import List, Optional, Sequence, Union

import numpy as np

from core.tensor import Tensor
from data.text import text_tokenize
from llm.vocab import Vocabulary
from utils.errors import ContractError, DimensionError

TEXT = 0
IMAGE = 1

CAPTION_PROMPT = "what is shown?"
QA_SEPARATOR = " "

Element = Union[np.ndarray, Tensor]


class MixedSequence:
    """Ordered token-id runs and continuous spans.

    Position i is supervised when element i+1 is a supervised token; its target
    is that token and its modality tag is that token's modality. Span rows are
    never targets.
    """

    def __init__(self, task: str = "text"):
        self.task = task
        self.elements: List[Element] = []
        self._ids: List[np.ndarray] = []
        self._supervised: List[np.ndarray] = []
        self._tags: List[np.ndarray] = []

    def add_tokens(self, ids: Sequence[int], supervised: bool = False, tag: int = TEXT) -> "MixedSequence":
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size == 0:
            return self
        if self.elements and isinstance(self.elements[-1], np.ndarray):
            self.elements[-1] = np.concatenate([self.elements[-1], ids])
        else:
            self.elements.append(ids)
        self._ids.append(ids)
        self._supervised.append(np.full(ids.size, supervised, dtype=bool))
        self._tags.append(np.full(ids.size, tag, dtype=np.int8))
        return self

    def add_span(self, span: Tensor) -> "MixedSequence":
        if span.ndim != 2:
            raise DimensionError(f"a continuous span is (rows, d_model), got {span.shape}")
        self.elements.append(span)
        rows = span.shape[0]
        self._ids.append(np.full(rows, -1, dtype=np.int64))
        self._supervised.append(np.zeros(rows, dtype=bool))
        self._tags.append(np.full(rows, TEXT, dtype=np.int8))
        return self

    def __len__(self) -> int:
        return int(sum(len(ids) for ids in self._ids))

    @property
    def token_ids(self) -> np.ndarray:
        """Id per position, -1 inside spans."""
        return np.concatenate(self._ids) if self._ids else np.zeros(0, dtype=np.int64)

    @property
    def span_positions(self) -> np.ndarray:
        return np.flatnonzero(self.token_ids < 0)

    @property
    def targets(self) -> np.ndarray:
        ids = self.token_ids
        out = np.full(ids.shape, -1, dtype=np.int64)
        sup = self._supervised_flags()
        out[:-1] = np.where(sup[1:], ids[1:], -1)
        return out

    @property
    def loss_mask(self) -> np.ndarray:
        sup = self._supervised_flags()
        mask = np.zeros(sup.shape, dtype=np.float32)
        mask[:-1] = sup[1:]
        return mask

    @property
    def modality(self) -> np.ndarray:
        tags = np.concatenate(self._tags) if self._tags else np.zeros(0, dtype=np.int8)
        out = np.full(tags.shape, TEXT, dtype=np.int8)
        out[:-1] = tags[1:]
        return out

    def _supervised_flags(self) -> np.ndarray:
        return np.concatenate(self._supervised) if self._supervised else np.zeros(0, dtype=bool)

    def validate(self, vocab: Vocabulary) -> "MixedSequence":
        ids = self.token_ids
        tokens = ids[ids >= 0]
        if np.any(tokens >= vocab.size):
            raise ContractError(f"token id outside the vocabulary of {vocab.size}")
        targets = self.targets[self.loss_mask > 0]
        if np.any(targets < 0):
            raise ContractError("a supervised position targets a continuous span")
        return self


def question_prompt_ids(question: str) -> np.ndarray:
    return np.asarray(text_tokenize(question + QA_SEPARATOR), dtype=np.int64)


def build_understanding_sequence(span: Tensor, question: str, answer: str, vocab: Vocabulary) -> MixedSequence:
    """[BOS, span, question + separator, answer, EOS]; loss on the answer and EOS."""
    seq = MixedSequence(task="understanding")
    seq.add_tokens([vocab.bos])
    seq.add_span(span)
    seq.add_tokens(question_prompt_ids(question))
    seq.add_tokens(text_tokenize(answer), supervised=True, tag=TEXT)
    seq.add_tokens([vocab.eos], supervised=True, tag=TEXT)
    return seq.validate(vocab)


def build_caption_sequence(span: Tensor, caption_text: str, vocab: Vocabulary) -> MixedSequence:
    return build_understanding_sequence(span, CAPTION_PROMPT, caption_text, vocab)


def build_generation_sequence(caption_text: str, codes: np.ndarray, vocab: Vocabulary) -> MixedSequence:
    """[BOS, caption, BOI, image ids row-major, EOI]; loss on the image ids and EOI only."""
    seq = MixedSequence(task="generation")
    seq.add_tokens([vocab.bos])
    seq.add_tokens(text_tokenize(caption_text))
    seq.add_tokens([vocab.boi])
    seq.add_tokens(vocab.image_ids(np.asarray(codes).reshape(-1)), supervised=True, tag=IMAGE)
    seq.add_tokens([vocab.eoi], supervised=True, tag=IMAGE)
    return seq.validate(vocab)


def build_text_sequence(text: str, vocab: Vocabulary) -> MixedSequence:
    seq = MixedSequence(task="text")
    seq.add_tokens([vocab.bos])
    seq.add_tokens(text_tokenize(text), supervised=True, tag=TEXT)
    seq.add_tokens([vocab.eos], supervised=True, tag=TEXT)
    return seq.validate(vocab)


def generation_prefix(caption_ids: Sequence[int], vocab: Vocabulary) -> np.ndarray:
    return np.concatenate([[vocab.bos], np.asarray(caption_ids, dtype=np.int64), [vocab.boi]]).astype(np.int64)


def answer_prefix(question: str, vocab: Vocabulary, span: Optional[Tensor] = None) -> MixedSequence:
    seq = MixedSequence(task="understanding")
    seq.add_tokens([vocab.bos])
    if span is not None:
        seq.add_span(span)
    seq.add_tokens(question_prompt_ids(question))
    return seq
