"""Constrained image-token generation and greedy question answering."""

from typing import List, Optional, Sequence

import numpy as np

from core.tensor import Tensor, no_grad
from data.rng import Pcg32
from data.text import text_detokenize
from llm.decoder import TransformerDecoder
from llm.sequence import MixedSequence, answer_prefix, generation_prefix
from tokenizer.adapters import DiscreteCodes
from utils.config import SamplerConfig
from utils.errors import ContractError

ANSWER_CAP = 32


class Sampler:
    """Temperature plus top-k over an allowed id set; temperature 0 means greedy."""

    def __init__(self, config: Optional[SamplerConfig] = None, rng: Optional[Pcg32] = None):
        config = config or SamplerConfig()
        self.temperature = config.temperature
        self.top_k = config.top_k
        self.rng = rng or Pcg32(0, 0)

    @classmethod
    def greedy(cls) -> "Sampler":
        return cls(SamplerConfig(temperature=0.0, top_k=1))

    def sample(self, logits: np.ndarray, allowed: np.ndarray) -> int:
        candidates = np.flatnonzero(allowed)
        if candidates.size == 0:
            raise ContractError("no token is allowed at this step")
        values = np.asarray(logits, dtype=np.float64)[candidates]
        if self.temperature <= 0.0:
            return int(candidates[int(np.argmax(values))])
        k = min(self.top_k, candidates.size) if self.top_k > 0 else candidates.size
        order = np.argsort(-values, kind="stable")[:k]
        scaled = values[order] / self.temperature
        probs = np.exp(scaled - scaled.max())
        probs /= probs.sum()
        u = self.rng.uniform()
        pick = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        return int(candidates[order[min(pick, k - 1)]])


def generate_image_sequence(prompt_ids: Sequence[int], model: TransformerDecoder, side: int,
                            sampler: Sampler) -> np.ndarray:
    """[BOS, prompt, BOI, side*side image ids, EOI] with logits masked to the image range."""
    vocab = model.vocab
    count = side * side
    budget = model.config.max_seq_len - count - 2
    if len(prompt_ids) > budget:
        raise ContractError(f"prompt of {len(prompt_ids)} tokens exceeds the context budget {budget}")
    ids = list(generation_prefix(prompt_ids, vocab))
    allowed = vocab.image_logit_mask()
    with no_grad():
        for _ in range(count):
            seq = MixedSequence(task="generation").add_tokens(ids)
            logits = model.logits_for(seq).data[-1]
            token = sampler.sample(logits, allowed)
            if not vocab.is_image(token):
                raise ContractError(f"decoder emitted non-image id {token} inside an image span")
            ids.append(token)
    ids.append(vocab.eoi)
    return np.asarray(ids, dtype=np.int64)


def generate_image_tokens(prompt_ids: Sequence[int], model: TransformerDecoder, side: int,
                          sampler: Sampler) -> DiscreteCodes:
    ids = generate_image_sequence(prompt_ids, model, side, sampler)
    count = side * side
    return DiscreteCodes(side, model.vocab.codes_of(ids[-count - 1:-1]))


def answer_question(image: np.ndarray, question: str, model: TransformerDecoder, tokenizer,
                    adapter: str = "continuous", max_len: int = ANSWER_CAP) -> List[int]:
    """Greedy answer ids (EOS excluded) for one image; logits masked to text ids and EOS."""
    vocab = model.vocab
    allowed = vocab.answer_logit_mask()
    with no_grad():
        span = tokenizer.embed(np.asarray(image, dtype=np.float32), adapter)
        answer: List[int] = []
        for _ in range(max_len):
            seq = answer_prefix(question, vocab, span=Tensor(span.data))
            seq.add_tokens(answer)
            token = int(np.argmax(np.where(allowed, model.logits_for(seq).data[-1], -np.inf)))
            if token == vocab.eos:
                break
            answer.append(token)
    return answer


def answer_text(image: np.ndarray, question: str, model: TransformerDecoder, tokenizer,
                adapter: str = "continuous") -> str:
    return text_detokenize(answer_question(image, question, model, tokenizer, adapter=adapter))
