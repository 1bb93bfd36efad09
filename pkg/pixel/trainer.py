"""Progressive-resolution training of the pixel decoder on frozen-tokenizer conditioning."""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.nn import module_hash
from core.optim import TrainState
from core.tensor import no_grad
from data.corpus import Corpus
from data.render import from_signed, render, to_signed
from pixel.dit import DiT, grow_resolution
from pixel.flow import cfm_loss, euler_sample
from pixel.patches import patchify
from utils.config import DiTConfig, StageConfig
from utils.errors import ContractError
from utils.logger import LossLog, log_component_call, progress, setup_logger

logger = setup_logger(__name__)


def passes_short_side(shape: Sequence[int], target: int) -> bool:
    """True when an (H, W, ...) source image is large enough for the target resolution."""
    return min(int(shape[0]), int(shape[1])) >= target


def short_side_filter(shapes: Sequence[Sequence[int]], target: int) -> List[int]:
    return [i for i, shape in enumerate(shapes) if passes_short_side(shape, target)]


def images_at(corpus: Corpus, resolution: int, indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Working images of the selected scenes at `resolution`; only those scenes are rendered again."""
    indices = list(range(len(corpus))) if indices is None else list(indices)
    if corpus.resolution == resolution:
        return corpus.images[indices]
    return np.stack([render(corpus.specs[i], resolution) for i in indices]).astype(np.float32)


def conditioning_from_codes(tokenizer, indices: np.ndarray) -> np.ndarray:
    """Discrete-adapter embeddings for code indices, (..., G2, d_model)."""
    with no_grad():
        return tokenizer.discrete.embed_codes(np.asarray(indices, dtype=np.int64)).data.copy()


class PixelDecoderTrainer:
    """AdamW on cfm_loss conditioned on codes of ground-truth images."""

    def __init__(self, model: DiT, tokenizer, corpus: Corpus, stage: StageConfig,
                 progress_bar: bool = True, loss_log: Optional[LossLog] = None):
        self.model = model
        self.tokenizer = tokenizer
        self.stage = stage
        self.resolution = model.config.resolution
        self.rng = np.random.default_rng(stage.seed)
        self.progress_bar = progress_bar
        self.loss_log = loss_log or LossLog(None, stage.log_every)
        keep = short_side_filter(corpus.source_shapes, self.resolution)
        if not keep:
            raise ContractError(f"no source image has a short side of at least {self.resolution}px")
        self.kept = len(keep)
        self.dropped = len(corpus) - len(keep)
        self.tokenizer_hash = module_hash(tokenizer)
        codes = tokenizer.encode_codes(images_at(corpus, tokenizer.vit_config.image_size, keep))
        self.conditioning = conditioning_from_codes(tokenizer, codes)
        self.targets = patchify(to_signed(images_at(corpus, self.resolution, keep)), model.config.patch_size)
        self.state = TrainState(model.parameter_groups(), stage.freeze, lr=stage.lr,
                                weight_decay=stage.weight_decay, grad_clip=stage.grad_clip)
        self.name = "PixelDecoderTrainer"
        log_component_call(logger, self.name, "initialized", {
            "stage": stage.stage, "resolution": self.resolution, "kept": self.kept, "dropped": self.dropped,
        })

    def train_step(self, batch: np.ndarray) -> float:
        loss = cfm_loss(self.targets[batch], self.conditioning[batch], self.model, self.rng)
        value = loss.item()
        self.state.step(loss)
        return value

    def train(self, steps: Optional[int] = None) -> Dict[str, float]:
        steps = self.stage.steps if steps is None else steps
        size = min(self.stage.batch_size, len(self.targets))
        loss = float("nan")
        for step in progress(range(1, steps + 1), self.progress_bar, desc=self.stage.stage):
            loss = self.train_step(self.rng.choice(len(self.targets), size=size, replace=False))
            if self.loss_log.due(step):
                self.loss_log.record(step, {"cfm": loss})
                log_component_call(logger, self.name, f"step {step}/{steps}", {"loss": round(loss, 6)})
        if module_hash(self.tokenizer) != self.tokenizer_hash:
            raise ContractError("tokenizer weights changed while training the pixel decoder")
        return {"loss": loss, "kept": self.kept, "dropped": self.dropped}


def build_stage_model(tokenizer, config: DiTConfig, stage_number: int, seed: int = 0,
                      previous: Optional[DiT] = None, resolution: Optional[int] = None) -> DiT:
    """Stage 1 starts from scratch at config.resolution; stage 2 grows a stage-1 model to `resolution`."""
    if stage_number == 1:
        return DiT(config, tokenizer.d_model, tokenizer.tokens_per_image, seed=seed)
    if stage_number == 2:
        if previous is None:
            raise ContractError("decoder stage 2 needs the stage-1 decoder checkpoint")
        return grow_resolution(previous, resolution or config.resolution, seed=seed)
    raise ContractError(f"unknown decoder stage {stage_number}")


def decoder_train_stage(tokenizer, corpus: Corpus, config: DiTConfig, stage: StageConfig, stage_number: int,
                        previous: Optional[DiT] = None, resolution: Optional[int] = None,
                        progress_bar: bool = True, loss_log: Optional[LossLog] = None) -> Tuple[DiT, Dict[str, float]]:
    model = build_stage_model(tokenizer, config, stage_number, stage.seed, previous, resolution)
    trainer = PixelDecoderTrainer(model, tokenizer, corpus, stage, progress_bar=progress_bar, loss_log=loss_log)
    return model, trainer.train()


def sample_images(model: DiT, conditioning: np.ndarray, steps: int, seed: int = 0) -> np.ndarray:
    """Images in [0, 1] for a batch of conditioning sequences."""
    conditioning = np.asarray(conditioning, dtype=np.float32)
    if conditioning.ndim == 2:
        conditioning = conditioning[None]
    shape = (conditioning.shape[0], model.config.num_patches, model.config.patch_dim)
    tokens = euler_sample(conditioning, model, steps, shape, np.random.default_rng(seed))
    return from_signed(model.to_image(tokens))


def render_codes(model: DiT, tokenizer, indices: np.ndarray, steps: int, seed: int = 0) -> np.ndarray:
    return sample_images(model, conditioning_from_codes(tokenizer, indices), steps, seed=seed)
