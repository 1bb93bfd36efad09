"""Model construction, checkpoint layout and the inference bundle built from a run directory."""

from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from data.rng import Pcg32
from data.text import text_tokenize
from llm.decoder import TransformerDecoder
from llm.generation import Sampler, answer_text, generate_image_tokens
from llm.vocab import Vocabulary
from pixel.dit import DiT
from pixel.trainer import render_codes
from tokenizer.adapters import DiscreteCodes
from tokenizer.hybrid import HybridTokenizer
from tokenizer.patch_quantizer import PatchQuantizer
from training.checkpoint import CheckpointManifest, load_checkpoint, restore_module
from utils.config import DecoderConfig, DiTConfig, FSQConfig, RunConfig, SamplerConfig, ViTConfig
from utils.errors import ContractError, FormatError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

CHECKPOINT_DIR = "checkpoints"
CHECKPOINT_SUFFIX = ".mnz"
LLM_STAGES = ("llm-sft", "llm-cpt", "llm-pretrain")
DECODER_STAGES = ("decoder-2", "decoder-1")
GENERATION_STREAM = 31
GENERATION_SOURCES = ("tokenizer", "proxy")


def checkpoint_path(run_dir: Path, stage: str) -> Path:
    return Path(run_dir) / CHECKPOINT_DIR / f"{stage}{CHECKPOINT_SUFFIX}"


def find_checkpoint(stage: str, *dirs: Optional[Path]) -> Optional[Path]:
    """First existing checkpoint for `stage` among the run directories, in order."""
    for run_dir in dirs:
        if run_dir is None:
            continue
        path = checkpoint_path(run_dir, stage)
        if path.exists():
            return path
    return None


def new_tokenizer(config: RunConfig) -> HybridTokenizer:
    return HybridTokenizer(config.vit, config.fsq, config.llm.d_model, seed=config.seed)


def new_llm(config: RunConfig, codebook_size: int, decoder: Optional[DecoderConfig] = None) -> TransformerDecoder:
    return TransformerDecoder(decoder or config.llm, Vocabulary(k=codebook_size), seed=config.seed + 2)


def new_proxy(config: RunConfig) -> PatchQuantizer:
    return PatchQuantizer(config.vit.image_size, config.vit.patch_size, config.fsq, seed=config.seed + 5)


def tokenizer_metadata(tokenizer: HybridTokenizer) -> Dict[str, Any]:
    return {
        "vit": tokenizer.vit_config.model_dump(),
        "fsq": tokenizer.fsq_config.model_dump(),
        "d_model": tokenizer.d_model,
    }


def llm_metadata(model: TransformerDecoder) -> Dict[str, Any]:
    return {"llm": model.config.model_dump(), "vocab": model.vocab.model_dump()}


def dit_metadata(model: DiT) -> Dict[str, Any]:
    return {"dit": model.config.model_dump(), "cond_dim": model.cond_dim, "cond_tokens": model.cond_tokens}


def proxy_metadata(proxy: PatchQuantizer) -> Dict[str, Any]:
    return {
        "proxy": {
            "image_size": proxy.image_size,
            "patch_size": proxy.patch_size,
            "fsq": {"levels": list(proxy.fsq.levels)},
            "hidden": proxy.hidden,
        }
    }


def _meta(manifest: CheckpointManifest, key: str, path: Path) -> Any:
    if key not in manifest.metadata:
        raise FormatError(f"checkpoint {path} metadata lacks {key!r}")
    return manifest.metadata[key]


def load_tokenizer(manifest: CheckpointManifest, path: Path = Path("<memory>")) -> HybridTokenizer:
    """Rebuild the tokenizer from the configs recorded in the checkpoint."""
    tokenizer = HybridTokenizer(ViTConfig.model_validate(_meta(manifest, "vit", path)),
                                FSQConfig.model_validate(_meta(manifest, "fsq", path)),
                                int(_meta(manifest, "d_model", path)))
    return restore_module(manifest, "tokenizer", tokenizer)


def load_llm(manifest: CheckpointManifest, path: Path = Path("<memory>")) -> TransformerDecoder:
    model = TransformerDecoder(DecoderConfig.model_validate(_meta(manifest, "llm", path)),
                               Vocabulary.model_validate(_meta(manifest, "vocab", path)))
    return restore_module(manifest, "llm", model)


def load_dit(manifest: CheckpointManifest, path: Path = Path("<memory>")) -> DiT:
    model = DiT(DiTConfig.model_validate(_meta(manifest, "dit", path)),
                int(_meta(manifest, "cond_dim", path)), int(_meta(manifest, "cond_tokens", path)))
    return restore_module(manifest, "dit", model)


def load_proxy(manifest: CheckpointManifest, path: Path = Path("<memory>")) -> PatchQuantizer:
    meta = _meta(manifest, "proxy", path)
    proxy = PatchQuantizer(int(meta["image_size"]), int(meta["patch_size"]),
                           FSQConfig.model_validate(meta["fsq"]), hidden=int(meta["hidden"]))
    return restore_module(manifest, "proxy", proxy)


class ModelBundle:
    """Tokenizer, unified decoder and pixel decoder wired for generation and question answering."""

    def __init__(self, tokenizer: HybridTokenizer, llm: TransformerDecoder, dit: Optional[DiT] = None,
                 proxy: Optional[PatchQuantizer] = None, adapter: str = "continuous",
                 generation_source: str = "tokenizer", sampler: Optional[SamplerConfig] = None,
                 sample_steps: Optional[int] = None):
        if generation_source not in GENERATION_SOURCES:
            raise ContractError(f"unknown generation source {generation_source!r}")
        if generation_source == "proxy" and proxy is None:
            raise ContractError("proxy generation needs the proxy quantizer")
        self.tokenizer = tokenizer
        self.llm = llm
        self.dit = dit
        self.proxy = proxy
        self.adapter = adapter
        self.generation_source = generation_source
        self.sampler_config = sampler or SamplerConfig()
        self.sample_steps = sample_steps or (dit.config.sample_steps if dit is not None else 50)
        self.name = "ModelBundle"

    @property
    def grid_side(self) -> int:
        return self.proxy.grid_side if self.generation_source == "proxy" else self.tokenizer.grid_side

    def generate_codes(self, prompt: str, seed: int = 0) -> DiscreteCodes:
        sampler = Sampler(self.sampler_config, Pcg32(seed, GENERATION_STREAM))
        return generate_image_tokens(text_tokenize(prompt), self.llm, self.grid_side, sampler)

    def render(self, codes: DiscreteCodes, seed: int = 0) -> np.ndarray:
        """Pixels in [0, 1] for one grid of codes."""
        if self.generation_source == "proxy":
            return self.proxy.decode(codes.indices[None])[0]
        if self.dit is None:
            raise ContractError("bundle has no pixel decoder; train decoder-1 first")
        return render_codes(self.dit, self.tokenizer, codes.indices[None], self.sample_steps, seed=seed)[0]

    def generate(self, prompt: str, seed: int = 0) -> np.ndarray:
        return self.render(self.generate_codes(prompt, seed), seed)

    def answer(self, image: np.ndarray, question: str) -> str:
        return answer_text(image, question, self.llm, self.tokenizer, adapter=self.adapter)

    @classmethod
    def load(cls, run_dir: Path, sampler: Optional[SamplerConfig] = None, require_decoder: bool = True,
             sample_steps: Optional[int] = None, base_dir: Optional[Path] = None) -> "ModelBundle":
        """Latest LLM and pixel-decoder checkpoints of a run; the LLM checkpoint carries the tokenizer.

        Decoder and proxy checkpoints missing from `run_dir` are taken from `base_dir`.
        """
        run_dir = Path(run_dir)
        llm_path = next((p for p in (find_checkpoint(s, run_dir) for s in LLM_STAGES) if p), None)
        if llm_path is None:
            raise FormatError(f"checkpoint not found: {checkpoint_path(run_dir, LLM_STAGES[-1])}")
        manifest = load_checkpoint(llm_path)
        tokenizer = load_tokenizer(manifest, llm_path)
        llm = load_llm(manifest, llm_path)
        adapter = manifest.metadata.get("adapter", "continuous")
        source = manifest.metadata.get("generation_source", "tokenizer")

        proxy = None
        if source == "proxy":
            proxy_path = find_checkpoint("proxy-quantizer", run_dir, base_dir) or \
                checkpoint_path(run_dir, "proxy-quantizer")
            proxy = load_proxy(load_checkpoint(proxy_path), proxy_path)

        dit = None
        decoder_path = next((p for p in (find_checkpoint(s, run_dir, base_dir) for s in DECODER_STAGES) if p), None)
        if decoder_path is not None:
            dit = load_dit(load_checkpoint(decoder_path), decoder_path)
        elif require_decoder and source == "tokenizer":
            raise FormatError(f"checkpoint not found: {checkpoint_path(run_dir, DECODER_STAGES[-1])}")

        log_component_call(logger, "ModelBundle", "Loaded", {
            "run_dir": str(run_dir), "llm": llm_path.name, "decoder": decoder_path.name if decoder_path else None,
            "adapter": adapter, "generation_source": source,
        })
        return cls(tokenizer, llm, dit=dit, proxy=proxy, adapter=adapter, generation_source=source,
                   sampler=sampler, sample_steps=sample_steps)
