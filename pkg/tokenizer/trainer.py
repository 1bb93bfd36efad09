"""Tokenizer training: a random adapter per sample feeds a small attached decoder."""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.optim import TrainState
from data.corpus import Corpus
from data.rng import Pcg32
from llm.decoder import TransformerDecoder, batch_targets
from llm.loss import unified_loss_arrays
from llm.sequence import MixedSequence, build_caption_sequence, build_text_sequence, build_understanding_sequence
from llm.vocab import Vocabulary
from tokenizer.hybrid import ADAPTERS, HybridTokenizer
from tokenizer.patch_quantizer import PatchQuantizer
from utils.config import DecoderConfig, StageConfig
from utils.errors import ContractError
from utils.logger import LossLog, log_component_call, progress, setup_logger

logger = setup_logger(__name__)

ADAPTER_PROBABILITY = 0.5
TEXT_ONLY_FRACTION = 0.2
QA_FRACTION = 0.5


def draw_adapter(rng: Pcg32, p_continuous: float = ADAPTER_PROBABILITY) -> str:
    return ADAPTERS[0] if rng.bernoulli(p_continuous) else ADAPTERS[1]


class TokenizerTrainer:
    """Trains encoder, both adapters and the small decoder jointly; nothing is frozen."""

    def __init__(self, tokenizer: HybridTokenizer, corpus: Corpus, stage: StageConfig,
                 decoder_config: Optional[DecoderConfig] = None, vocab: Optional[Vocabulary] = None,
                 progress_bar: bool = True, loss_log: Optional[LossLog] = None):
        self.tokenizer = tokenizer
        self.corpus = corpus
        self.stage = stage
        self.vocab = vocab or Vocabulary(k=tokenizer.codebook_size)
        config = decoder_config or DecoderConfig(depth=2)
        if config.d_model != tokenizer.d_model:
            raise ContractError(f"small decoder width {config.d_model} != tokenizer d_model {tokenizer.d_model}")
        self.small_decoder = TransformerDecoder(config, self.vocab, seed=stage.seed + 1, group="small_decoder")
        self.rng = Pcg32(stage.seed, 3)
        self.progress_bar = progress_bar
        self.loss_log = loss_log or LossLog(None, stage.log_every)
        groups = dict(tokenizer.parameter_groups())
        groups.update(self.small_decoder.parameter_groups())
        self.state = TrainState(groups, stage.freeze, lr=stage.lr, weight_decay=stage.weight_decay,
                                grad_clip=stage.grad_clip)
        self.adapter_draws: List[str] = []
        self.history: List[Dict[str, float]] = []
        self.name = "TokenizerTrainer"
        log_component_call(logger, self.name, "initialized", {
            "stage": stage.stage, "samples": len(corpus),
            "small_decoder_parameters": self.small_decoder.num_parameters(),
        })

    def sample(self, index: int) -> Tuple[MixedSequence, Optional[str]]:
        """One training sequence and the adapter it used (None for text-only)."""
        record = self.corpus.records[index]
        if self.rng.bernoulli(TEXT_ONLY_FRACTION):
            return build_text_sequence(self.corpus.text_sample(index, self.rng), self.vocab), None
        adapter = draw_adapter(self.rng)
        span = self.tokenizer.embed(self.corpus.images[index], adapter)
        if self.rng.bernoulli(QA_FRACTION):
            seq = build_understanding_sequence(span, record.qa.question, record.qa.answer, self.vocab)
        else:
            seq = build_caption_sequence(span, record.caption, self.vocab)
        return seq, adapter

    def build_batch(self, size: int) -> List[MixedSequence]:
        batch = []
        for _ in range(size):
            seq, adapter = self.sample(self.rng.randrange(len(self.corpus)))
            if adapter is not None:
                self.adapter_draws.append(adapter)
            batch.append(seq)
        return batch

    def train_step(self, batch: Sequence[MixedSequence]) -> Dict[str, float]:
        if not batch:
            raise ContractError("empty batch")
        emb, n = self.small_decoder.embed_batch(batch)
        logits = self.small_decoder(emb)
        targets, mask, modality = batch_targets(batch, n)
        loss, parts = unified_loss_arrays(logits, targets, mask, modality)
        parts["grad_norm"] = self.state.step(loss)
        return parts

    def train(self, steps: Optional[int] = None, eval_images: Optional[np.ndarray] = None) -> Dict[str, float]:
        steps = self.stage.steps if steps is None else steps
        if len(self.corpus) == 0:
            raise ContractError("training corpus is empty")
        parts: Dict[str, float] = {}
        for step in progress(range(1, steps + 1), self.progress_bar, desc=self.stage.stage):
            parts = self.train_step(self.build_batch(self.stage.batch_size))
            if self.loss_log.due(step):
                self.loss_log.record(step, {"total": parts["loss"]})
                self.history.append({"step": step, **parts})
                log_component_call(logger, self.name, f"step {step}/{steps}", parts)
        images = self.corpus.images[:100] if eval_images is None else eval_images
        if len(images):
            usage = self.tokenizer.codebook_usage(images)
            parts["codebook_usage"] = usage
            log_component_call(logger, self.name, "Codebook usage", {"fraction": round(usage, 4),
                                                                       "images": len(images)})
        return parts

    def continuous_fraction(self) -> float:
        if not self.adapter_draws:
            return 0.0
        return self.adapter_draws.count(ADAPTERS[0]) / len(self.adapter_draws)


def tokenizer_train_step(batch: Sequence[MixedSequence], trainer: TokenizerTrainer) -> float:
    return trainer.train_step(batch)["loss"]


class PatchQuantizerTrainer:
    """Fits the pixel-space quantizer on raw images with a reconstruction loss."""

    def __init__(self, quantizer: PatchQuantizer, images: np.ndarray, stage: StageConfig,
                 progress_bar: bool = True, loss_log: Optional[LossLog] = None):
        if len(images) == 0:
            raise ContractError("patch quantizer needs at least one image")
        self.quantizer = quantizer
        self.images = np.asarray(images, dtype=np.float32)
        self.stage = stage
        self.rng = np.random.default_rng(stage.seed)
        self.progress_bar = progress_bar
        self.loss_log = loss_log or LossLog(None, stage.log_every)
        self.state = TrainState(quantizer.parameter_groups(), stage.freeze, lr=stage.lr,
                                weight_decay=stage.weight_decay, grad_clip=stage.grad_clip)
        self.name = "PatchQuantizerTrainer"

    def train_step(self, batch: np.ndarray) -> float:
        loss = self.quantizer.reconstruction_loss(self.images[batch])
        value = loss.item()
        self.state.step(loss)
        return value

    def train(self, steps: Optional[int] = None) -> Dict[str, float]:
        steps = self.stage.steps if steps is None else steps
        size = min(self.stage.batch_size, len(self.images))
        loss = float("nan")
        for step in progress(range(1, steps + 1), self.progress_bar, desc=self.stage.stage):
            loss = self.train_step(self.rng.choice(len(self.images), size=size, replace=False))
            if self.loss_log.due(step):
                self.loss_log.record(step, {"reconstruction": loss})
                log_component_call(logger, self.name, f"step {step}/{steps}", {"loss": round(loss, 6)})
        return {"loss": loss}
