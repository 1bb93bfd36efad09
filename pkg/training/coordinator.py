"""Stage coordinator - runs training stages in order and persists their checkpoints."""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from data.corpus import Corpus, build_splits, read_corpus, write_corpus
from llm.trainer import UnifiedTrainer
from pixel.trainer import PixelDecoderTrainer, build_stage_model, images_at
from tokenizer.trainer import PatchQuantizerTrainer, TokenizerTrainer
from training.bundle import (
    checkpoint_path,
    dit_metadata,
    find_checkpoint,
    llm_metadata,
    load_dit,
    load_llm,
    load_proxy,
    load_tokenizer,
    new_llm,
    new_proxy,
    new_tokenizer,
    proxy_metadata,
    tokenizer_metadata,
)
from training.checkpoint import CheckpointManifest, build_manifest, load_checkpoint, restore_module, save_checkpoint
from training.mixture import MixSampler
from training.variants import VariantSpec
from utils.config import DataConfig, RunConfig
from utils.errors import ContractError
from utils.logger import LossLog, log_component_call, setup_logger

logger = setup_logger(__name__)

PIPELINE = ("tokenizer", "proxy-quantizer", "llm-pretrain", "llm-cpt", "llm-sft", "decoder-1", "decoder-2")
ENCODE_BATCH = 64


def load_or_build_corpora(data: DataConfig, run_dir: Path, base_dir: Optional[Path] = None) -> Tuple[Corpus, Corpus]:
    """Corpora from `<dir>/data` if a previous gen-data wrote them, else generated and written to run_dir."""
    for root in (run_dir, base_dir):
        if root is None:
            continue
        train_path = Path(root) / "data" / "train.jsonl"
        eval_path = Path(root) / "data" / "eval.jsonl"
        if train_path.exists() and eval_path.exists():
            logger.info(f"Reading corpora from {train_path.parent}")
            return (read_corpus(train_path, "train", data.source_resolution),
                    read_corpus(eval_path, "eval", data.source_resolution))
    train, held_out = build_splits(data.seed, data.train_size, data.eval_size, data.source_resolution,
                                   data.source_sizes)
    write_corpus(train, Path(run_dir) / "data")
    write_corpus(held_out, Path(run_dir) / "data")
    return train, held_out


def encode_in_batches(encoder, images: np.ndarray, batch_size: int = ENCODE_BATCH) -> np.ndarray:
    return np.concatenate([encoder.encode_codes(images[i:i + batch_size])
                           for i in range(0, len(images), batch_size)])


class StageCoordinator:
    """Runs one stage at a time against a run directory.

    Prerequisite checkpoints are looked up in the run directory first and then in
    `base_dir`, so ablation variants can reuse a shared tokenizer and decoder.
    """

    def __init__(self, config: RunConfig, run_dir: Path, base_dir: Optional[Path] = None,
                 variant: Optional[VariantSpec] = None, progress_bar: Optional[bool] = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self.variant = variant or VariantSpec()
        self.progress_bar = config.progress if progress_bar is None else progress_bar
        self._corpora: Optional[Tuple[Corpus, Corpus]] = None
        self.name = "StageCoordinator"
        log_component_call(logger, self.name, "initialized", {
            "run_dir": str(self.run_dir), "base_dir": str(self.base_dir) if self.base_dir else None,
            "variant": self.variant.kind,
        })

    def corpora(self) -> Tuple[Corpus, Corpus]:
        if self._corpora is None:
            self._corpora = load_or_build_corpora(self.config.data, self.run_dir, self.base_dir)
        return self._corpora

    def prerequisites(self, stage: str) -> Tuple[str, ...]:
        if stage in ("tokenizer", "proxy-quantizer"):
            required: Tuple[str, ...] = ()
        elif stage == "llm-pretrain":
            required = ("tokenizer",)
        elif stage == "llm-cpt":
            required = ("llm-pretrain",)
        elif stage == "llm-sft":
            required = ("llm-cpt",) if self.config.run_cpt else ("llm-pretrain",)
        elif stage == "decoder-1":
            required = ("tokenizer",)
        elif stage == "decoder-2":
            required = ("tokenizer", "decoder-1")
        else:
            raise ContractError(f"unknown stage {stage!r}; expected one of {PIPELINE}")
        if stage.startswith("llm-") and self.variant.generation_source == "proxy":
            required += ("proxy-quantizer",)
        return required

    def locate(self, stage: str) -> Optional[Path]:
        return find_checkpoint(stage, self.run_dir, self.base_dir)

    def require(self, stage: str) -> Dict[str, Path]:
        found: Dict[str, Path] = {}
        for needed in self.prerequisites(stage):
            path = self.locate(needed)
            if path is None:
                logger.error(f"Stage {stage} is missing prerequisite {needed}")
                raise ContractError(f"stage {stage!r} needs the {needed!r} checkpoint "
                                    f"({checkpoint_path(self.run_dir, needed)})")
            found[needed] = path
        return found

    def _loss_log(self, stage: str, previous: Optional[CheckpointManifest] = None) -> LossLog:
        done = int(previous.metadata.get("steps_done", 0)) if previous is not None else 0
        return LossLog(str(self.run_dir / "logs" / f"{stage}.csv"), self.config.stage(stage).log_every,
                       resume=previous is not None, offset=done)

    def _resume_from(self, stage: str, resume: bool) -> Optional[CheckpointManifest]:
        if not resume:
            return None
        path = checkpoint_path(self.run_dir, stage)
        if not path.exists():
            logger.warning(f"No {stage} checkpoint to resume at {path}; starting fresh")
            return None
        return load_checkpoint(path)

    def _metadata(self, stage: str, steps: int, previous: Optional[CheckpointManifest]) -> Dict[str, Any]:
        done = int(previous.metadata.get("steps_done", 0)) if previous is not None else 0
        return {
            "stage": stage,
            "seed": self.config.seed,
            "steps_done": done + steps,
            "variant": self.variant.kind,
            "adapter": self.variant.adapter,
            "generation_source": self.variant.generation_source,
        }

    def run_stage(self, stage: str, steps: Optional[int] = None, resume: bool = False) -> Dict[str, Any]:
        """Train one stage and write its checkpoint; returns the stage summary."""
        found = self.require(stage)
        stage_config = self.config.stage(stage)
        steps = stage_config.steps if steps is None else steps
        log_component_call(logger, self.name, f"Running {stage}", {
            "steps": steps, "prerequisites": {k: str(v) for k, v in found.items()}, "resume": resume})
        previous = self._resume_from(stage, resume)
        if stage == "tokenizer":
            metrics, manifest = self._run_tokenizer(steps, previous)
        elif stage == "proxy-quantizer":
            metrics, manifest = self._run_proxy(steps, previous)
        elif stage.startswith("llm-"):
            metrics, manifest = self._run_llm(stage, steps, found, previous)
        else:
            metrics, manifest = self._run_decoder(stage, steps, found, previous)
        manifest.metadata.update(self._metadata(stage, steps, previous))
        path = save_checkpoint(manifest, checkpoint_path(self.run_dir, stage))
        summary = {"stage": stage, "steps": steps, "checkpoint": str(path), "metrics": metrics}
        log_component_call(logger, self.name, f"Finished {stage}", summary)
        return summary

    def run_pipeline(self, stages: Optional[Sequence[str]] = None) -> List[Dict[str, Any]]:
        if stages is None:
            stages = [s for s in PIPELINE
                      if (s != "llm-cpt" or self.config.run_cpt)
                      and (s != "proxy-quantizer" or self.variant.generation_source == "proxy")]
        return [self.run_stage(stage) for stage in stages]

    def _run_tokenizer(self, steps: int, previous: Optional[CheckpointManifest]):
        train, _ = self.corpora()
        stage = self.config.stage("tokenizer")
        tokenizer = new_tokenizer(self.config)
        trainer = TokenizerTrainer(tokenizer, train, stage, decoder_config=self.config.small_decoder,
                                   progress_bar=self.progress_bar,
                                   loss_log=self._loss_log("tokenizer", previous))
        if previous is not None:
            restore_module(previous, "tokenizer", tokenizer)
            restore_module(previous, "small_decoder", trainer.small_decoder)
            trainer.state.optimizer.load_state_dict(previous.with_prefix("optim"))
        metrics = trainer.train(steps)
        manifest = build_manifest({"tokenizer": tokenizer, "small_decoder": trainer.small_decoder},
                                  tokenizer_metadata(tokenizer), {"optim": trainer.state.optimizer.state_dict()})
        return metrics, manifest

    def _run_proxy(self, steps: int, previous: Optional[CheckpointManifest]):
        train, _ = self.corpora()
        stage = self.config.stage("proxy-quantizer")
        proxy = new_proxy(self.config)
        trainer = PatchQuantizerTrainer(proxy, images_at(train, proxy.image_size), stage,
                                        progress_bar=self.progress_bar,
                                        loss_log=self._loss_log("proxy-quantizer", previous))
        if previous is not None:
            restore_module(previous, "proxy", proxy)
            trainer.state.optimizer.load_state_dict(previous.with_prefix("optim"))
        metrics = trainer.train(steps)
        manifest = build_manifest({"proxy": proxy}, proxy_metadata(proxy),
                                  {"optim": trainer.state.optimizer.state_dict()})
        return metrics, manifest

    def _generation_codes(self, tokenizer, train: Corpus, found: Dict[str, Path]) -> np.ndarray:
        if self.variant.generation_source == "proxy":
            path = found["proxy-quantizer"]
            proxy = load_proxy(load_checkpoint(path), path)
            return encode_in_batches(proxy, images_at(train, proxy.image_size))
        return encode_in_batches(tokenizer, images_at(train, tokenizer.vit_config.image_size))

    def _run_llm(self, stage_name: str, steps: int, found: Dict[str, Path],
                 previous: Optional[CheckpointManifest]):
        train, _ = self.corpora()
        stage = self.config.stage(stage_name)
        if previous is not None:
            source, source_path = previous, checkpoint_path(self.run_dir, stage_name)
        else:
            upstream = next(name for name in self.prerequisites(stage_name) if name != "proxy-quantizer")
            source_path = found[upstream]
            source = load_checkpoint(source_path)
        tokenizer = load_tokenizer(source, source_path)
        model = load_llm(source, source_path) if source.has_prefix("llm") else \
            new_llm(self.config, tokenizer.codebook_size)
        trainer = UnifiedTrainer(model, tokenizer, train, stage, MixSampler(stage.mix, seed=stage.seed),
                                 generation_codes=self._generation_codes(tokenizer, train, found),
                                 adapter=self.variant.adapter, loss_weights=self.config.loss_weights,
                                 progress_bar=self.progress_bar,
                                 loss_log=self._loss_log(stage_name, previous))
        if previous is not None:
            trainer.state.optimizer.load_state_dict(previous.with_prefix("optim"))
        metrics = trainer.train(steps)
        metadata = {**tokenizer_metadata(tokenizer), **llm_metadata(model)}
        manifest = build_manifest({"tokenizer": tokenizer, "llm": model}, metadata,
                                  {"optim": trainer.state.optimizer.state_dict()})
        return metrics, manifest

    def _run_decoder(self, stage_name: str, steps: int, found: Dict[str, Path],
                     previous: Optional[CheckpointManifest]):
        train, _ = self.corpora()
        stage = self.config.stage(stage_name)
        tokenizer = load_tokenizer(load_checkpoint(found["tokenizer"]), found["tokenizer"])
        if previous is not None:
            model = load_dit(previous, checkpoint_path(self.run_dir, stage_name))
        elif stage_name == "decoder-1":
            model = build_stage_model(tokenizer, self.config.dit, 1, seed=stage.seed)
        else:
            first = load_dit(load_checkpoint(found["decoder-1"]), found["decoder-1"])
            model = build_stage_model(tokenizer, self.config.dit, 2, seed=stage.seed, previous=first,
                                      resolution=self.config.stage2_resolution)
        trainer = PixelDecoderTrainer(model, tokenizer, train, stage, progress_bar=self.progress_bar,
                                      loss_log=self._loss_log(stage_name, previous))
        if previous is not None:
            trainer.state.optimizer.load_state_dict(previous.with_prefix("optim"))
        metrics = trainer.train(steps)
        manifest = build_manifest({"dit": model}, dit_metadata(model),
                                  {"optim": trainer.state.optimizer.state_dict()})
        return metrics, manifest


def run_stage(config: RunConfig, stage: str, run_dir: Path, base_dir: Optional[Path] = None,
              variant: Optional[VariantSpec] = None, steps: Optional[int] = None,
              resume: bool = False) -> Dict[str, Any]:
    return StageCoordinator(config, run_dir, base_dir, variant).run_stage(stage, steps=steps, resume=resume)
