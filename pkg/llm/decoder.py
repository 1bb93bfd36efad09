"""Causal transformer decoder over the joint vocabulary."""

from typing import Dict, List, Sequence, Tuple

import numpy as np

from core.nn import Block, Embedding, Linear, Module, RMSNorm, stack_rows
from core.tensor import Parameter, Tensor, add, concat
from llm.sequence import MixedSequence
from llm.vocab import Vocabulary
from utils.config import DecoderConfig
from utils.errors import ContractError, DimensionError
from utils.logger import setup_logger

logger = setup_logger(__name__)


class TransformerDecoder(Module):
    """Token embeddings (image rows untied from the tokenizer), learned positions, causal blocks."""

    def __init__(self, config: DecoderConfig, vocab: Vocabulary, seed: int = 0, group: str = "llm"):
        rng = np.random.default_rng(seed)
        self.config = config
        self.vocab = vocab
        self.group = group
        self.embed = Embedding(vocab.size, config.d_model, rng, std=0.02)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(config.max_seq_len, config.d_model)))
        self.blocks = [Block(config.d_model, config.heads, rng, mlp_ratio=config.mlp_ratio, causal=True)
                       for _ in range(config.depth)]
        self.norm = RMSNorm(config.d_model)
        self.head = Linear(config.d_model, vocab.size, rng)
        self.name = f"TransformerDecoder[{group}]"
        logger.info(f"{self.name} initialized: depth {config.depth}, width {config.d_model}, "
                    f"vocab {vocab.size}, {self.num_parameters()} parameters")

    def embed_mixed(self, seq: MixedSequence) -> Tensor:
        """Rows for ids, passthrough for spans, in order, plus positions."""
        pieces = []
        for element in seq.elements:
            if isinstance(element, Tensor):
                if element.shape[-1] != self.config.d_model:
                    raise DimensionError(f"span width {element.shape[-1]} != d_model {self.config.d_model}")
                pieces.append(element)
            else:
                ids = np.asarray(element, dtype=np.int64)
                if ids.size and (ids.min() < 0 or ids.max() >= self.vocab.size):
                    raise ContractError(f"token id outside [0, {self.vocab.size})")
                pieces.append(self.embed(ids))
        x = pieces[0] if len(pieces) == 1 else concat(pieces, axis=0)
        n = x.shape[0]
        self._check_length(n)
        return add(x, self.pos[0:n])

    def embed_batch(self, seqs: Sequence[MixedSequence]) -> Tuple[Tensor, int]:
        """Stack sequences right-padded with PAD rows; returns (B x n x d, n)."""
        if not seqs:
            raise ContractError("empty batch")
        n = max(len(s) for s in seqs)
        self._check_length(n)
        rows = []
        for seq in seqs:
            x = self.embed_mixed(seq)
            pad = n - len(seq)
            if pad:
                filler = add(self.embed(np.full(pad, self.vocab.pad, dtype=np.int64)), self.pos[len(seq):n])
                x = concat([x, filler], axis=0)
            rows.append(x)
        return stack_rows(rows), n

    def forward(self, emb: Tensor) -> Tensor:
        """(..., n, d) embeddings -> (..., n, V) logits."""
        self._check_length(emb.shape[-2])
        x = emb
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))

    def logits_for(self, seq: MixedSequence) -> Tensor:
        return self.forward(self.embed_mixed(seq))

    def _check_length(self, n: int) -> None:
        if n > self.config.max_seq_len:
            raise ContractError(f"sequence length {n} exceeds max_seq_len {self.config.max_seq_len}")

    def parameter_groups(self) -> Dict[str, List[Tuple[str, Parameter]]]:
        return {self.group: list(self.named_parameters(f"{self.group}."))}


def decoder_forward(emb: Tensor, model: TransformerDecoder) -> Tensor:
    return model(emb)


def batch_targets(seqs: Sequence[MixedSequence], n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded (targets, loss_mask, modality), flattened over the batch."""
    targets = np.full((len(seqs), n), -1, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=np.float32)
    modality = np.zeros((len(seqs), n), dtype=np.int8)
    for row, seq in enumerate(seqs):
        length = len(seq)
        targets[row, :length] = seq.targets
        mask[row, :length] = seq.loss_mask
        modality[row, :length] = seq.modality
    return targets.reshape(-1), mask.reshape(-1), modality.reshape(-1)
