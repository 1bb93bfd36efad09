"""Unified decoder training over understanding, generation and text-only sequences."""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from core.optim import TrainState
from data.corpus import Corpus
from data.rng import Pcg32
from llm.decoder import TransformerDecoder, batch_targets
from llm.loss import unified_loss_arrays
from llm.sequence import (
    MixedSequence,
    build_caption_sequence,
    build_generation_sequence,
    build_text_sequence,
    build_understanding_sequence,
)
from utils.config import LossWeights, StageConfig
from utils.errors import ContractError
from utils.logger import LossLog, log_component_call, progress, setup_logger

logger = setup_logger(__name__)

TASKS = ("understanding", "generation", "text")
QA_FRACTION = 0.7


class UnifiedTrainer:
    """Draws a task per sample, builds its sequence and applies the weighted next-token loss.

    The tokenizer supplies understanding spans; `generation_codes`
    holds one row of code indices per training image. Frozen groups are excluded from
    the optimizer and hashed so the caller can verify they never changed.
    """

    def __init__(self, model: TransformerDecoder, tokenizer, corpus: Corpus, stage: StageConfig,
                 sampler, generation_codes: Optional[np.ndarray] = None, adapter: str = "continuous",
                 loss_weights: Optional[LossWeights] = None, extra_groups: Optional[Dict] = None,
                 progress_bar: bool = True, loss_log: Optional[LossLog] = None):
        self.model = model
        self.tokenizer = tokenizer
        self.corpus = corpus
        self.stage = stage
        self.sampler = sampler
        self.adapter = adapter
        self.loss_weights = loss_weights or LossWeights()
        self.generation_codes = generation_codes
        self.rng = Pcg32(stage.seed, 11)
        self.progress_bar = progress_bar
        self.loss_log = loss_log or LossLog(None, stage.log_every)
        groups = dict(tokenizer.parameter_groups())
        groups.update(model.parameter_groups())
        groups.update(extra_groups or {})
        self.state = TrainState(groups, stage.freeze, lr=stage.lr, weight_decay=stage.weight_decay,
                                grad_clip=stage.grad_clip)
        self.frozen_hash_before = self.state.frozen_hash()
        self.history: List[Dict[str, float]] = []
        self.name = "UnifiedTrainer"
        log_component_call(logger, self.name, "initialized", {
            "stage": stage.stage, "freeze": self.state.freeze, "adapter": adapter,
            "trainable": sum(p.size for _, p in self.state.trainable),
        })

    def _understanding(self, index: int) -> MixedSequence:
        record = self.corpus.records[index]
        span = self.tokenizer.embed(self.corpus.images[index], self.adapter)
        if self.rng.bernoulli(QA_FRACTION):
            return build_understanding_sequence(span, record.qa.question, record.qa.answer, self.model.vocab)
        return build_caption_sequence(span, record.caption, self.model.vocab)

    def _generation(self, index: int) -> MixedSequence:
        if self.generation_codes is None:
            raise ContractError("generation task drawn but no generation codes were provided")
        return build_generation_sequence(self.corpus.records[index].caption, self.generation_codes[index],
                                         self.model.vocab)

    def _text(self, index: int) -> MixedSequence:
        return build_text_sequence(self.corpus.text_sample(index, self.rng), self.model.vocab)

    def build_batch(self, size: int) -> List[MixedSequence]:
        builders: Dict[str, Callable[[int], MixedSequence]] = {
            "understanding": self._understanding,
            "generation": self._generation,
            "text": self._text,
        }
        batch = []
        for _ in range(size):
            task = self.sampler.draw()
            batch.append(builders[task](self.rng.randrange(len(self.corpus))))
        return batch

    def train_step(self, batch: Sequence[MixedSequence]) -> Dict[str, float]:
        """Forward, unified loss, backward and AdamW over the trainable groups."""
        if not batch:
            raise ContractError("empty batch")
        emb, n = self.model.embed_batch(batch)
        logits = self.model(emb)
        targets, mask, modality = batch_targets(batch, n)
        loss, parts = unified_loss_arrays(logits, targets, mask, modality, self.loss_weights)
        parts["grad_norm"] = self.state.step(loss)
        return parts

    def train(self, steps: Optional[int] = None) -> Dict[str, float]:
        steps = self.stage.steps if steps is None else steps
        if len(self.corpus) == 0:
            raise ContractError("training corpus is empty")
        parts: Dict[str, float] = {}
        for step in progress(range(1, steps + 1), self.progress_bar, desc=self.stage.stage):
            parts = self.train_step(self.build_batch(self.stage.batch_size))
            if self.loss_log.due(step):
                losses = {"total": parts["loss"]}
                losses.update({k: parts[k] for k in ("text", "image") if k in parts})
                self.loss_log.record(step, losses)
                self.history.append({"step": step, **parts})
                log_component_call(logger, self.name, f"step {step}/{steps}", parts)
        frozen_after = self.state.frozen_hash()
        if frozen_after != self.frozen_hash_before:
            raise ContractError("frozen parameters changed during training")
        return parts

    def grad_norms_for(self, seqs: Sequence[MixedSequence]) -> Dict[str, float]:
        """Per-group gradient norms of one backward pass, without an optimizer step."""
        emb, n = self.model.embed_batch(seqs)
        targets, mask, modality = batch_targets(seqs, n)
        loss, _ = unified_loss_arrays(self.model(emb), targets, mask, modality, self.loss_weights)
        for _, p in self.state.trainable:
            p.grad = None
        loss.backward()
        norms = {}
        for group, params in self.state.groups.items():
            grads = [p.grad for _, p in params if p.grad is not None]
            norms[group] = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
        for _, p in self.state.trainable:
            p.grad = None
        return norms


def unified_train_step(batch: Sequence[MixedSequence], trainer: UnifiedTrainer) -> float:
    return trainer.train_step(batch)["loss"]
