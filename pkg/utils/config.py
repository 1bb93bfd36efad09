"""Configuration schema for every model, stage and run."""

import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from utils.errors import ContractError, FormatError

load_dotenv()

STC_BLOCK = 3

# Toy FSQ levels give K=125; the full-scale preset gives K=59049.
TOY_FSQ_LEVELS = [5, 5, 5]
FULL_SCALE_FSQ_LEVELS = [9, 9, 9, 9, 9]

PRETRAIN_MIX = (0.40, 0.40, 0.20)
SFT_MIX = (0.41, 0.45, 0.14)

DECODER_PRESETS = {"S": 2, "M": 4, "L": 6, "XL": 8}

PARAMETER_GROUPS = (
    "tokenizer.encoder",
    "tokenizer.continuous",
    "tokenizer.discrete",
    "small_decoder",
    "llm",
    "dit",
    "proxy",
)

StageName = Literal[
    "tokenizer", "proxy-quantizer", "llm-pretrain", "llm-cpt", "llm-sft", "decoder-1", "decoder-2"
]


class ViTConfig(BaseModel):
    """Vision encoder shape; the token grid must fold evenly into 3x3 STC blocks."""

    image_size: int = 48
    patch_size: int = 4
    d_vit: int = 64
    depth: int = 4
    heads: int = 4

    @model_validator(mode="after")
    def _check_grid(self) -> "ViTConfig":
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.grid_side % STC_BLOCK:
            raise ValueError(f"token grid side {self.grid_side} not divisible by STC block {STC_BLOCK}")
        if self.d_vit % self.heads:
            raise ValueError(f"d_vit {self.d_vit} not divisible by heads {self.heads}")
        return self

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def token_side(self) -> int:
        return self.grid_side // STC_BLOCK


class FSQConfig(BaseModel):
    levels: List[int] = Field(default_factory=lambda: list(TOY_FSQ_LEVELS))

    @field_validator("levels")
    @classmethod
    def _odd_levels(cls, levels: List[int]) -> List[int]:
        if not levels:
            raise ValueError("FSQ needs at least one channel")
        for level in levels:
            if level < 3 or level % 2 == 0:
                raise ValueError(f"FSQ levels must be odd and >= 3, got {level}")
        return levels

    @property
    def channels(self) -> int:
        return len(self.levels)

    @property
    def codebook_size(self) -> int:
        size = 1
        for level in self.levels:
            size *= level
        return size


class DecoderConfig(BaseModel):
    """Causal transformer over the joint vocabulary."""

    d_model: int = 128
    depth: int = 4
    heads: int = 4
    max_seq_len: int = 160
    mlp_ratio: int = 4

    @model_validator(mode="after")
    def _check_heads(self) -> "DecoderConfig":
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        return self

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "DecoderConfig":
        if name not in DECODER_PRESETS:
            raise ContractError(f"unknown decoder preset {name!r}; expected one of {sorted(DECODER_PRESETS)}")
        return cls(depth=DECODER_PRESETS[name], **overrides)


class DiTConfig(BaseModel):
    resolution: int = 32
    patch_size: int = 4
    d: int = 128
    depth: int = 6
    heads: int = 4
    mlp_ratio: int = 4
    share_weights: bool = True
    sample_steps: int = 50

    @model_validator(mode="after")
    def _check_patches(self) -> "DiTConfig":
        if self.resolution % self.patch_size:
            raise ValueError(f"resolution {self.resolution} not divisible by patch_size {self.patch_size}")
        if self.d % self.heads:
            raise ValueError(f"d {self.d} not divisible by heads {self.heads}")
        if self.sample_steps < 1:
            raise ValueError("sample_steps must be >= 1")
        return self

    @property
    def num_patches(self) -> int:
        return (self.resolution // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


class SamplerConfig(BaseModel):
    temperature: float = 1.0
    top_k: int = 50


class LossWeights(BaseModel):
    text: float = 1.0
    image: float = 0.5


class MixRatios(BaseModel):
    und: float = PRETRAIN_MIX[0]
    gen: float = PRETRAIN_MIX[1]
    text: float = PRETRAIN_MIX[2]

    @model_validator(mode="after")
    def _sum_to_one(self) -> "MixRatios":
        values = (self.und, self.gen, self.text)
        if any(v < 0 for v in values):
            raise ValueError(f"mix ratios must be non-negative, got {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"mix ratios must sum to 1, got {sum(values)!r}")
        return self

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.und, self.gen, self.text)

    @classmethod
    def from_tuple(cls, ratios: Iterable[float]) -> "MixRatios":
        und, gen, text = ratios
        return cls(und=und, gen=gen, text=text)


class StageConfig(BaseModel):
    stage: StageName
    steps: int = 100
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    mix: MixRatios = Field(default_factory=MixRatios)
    freeze: List[str] = Field(default_factory=list)
    seed: int = 0
    log_every: int = 50

    @field_validator("freeze")
    @classmethod
    def _known_groups(cls, freeze: List[str]) -> List[str]:
        unknown = sorted(set(freeze) - set(PARAMETER_GROUPS))
        if unknown:
            raise ValueError(f"freeze set names unregistered parameter groups: {unknown}")
        return freeze

    @field_validator("steps", "batch_size", "log_every")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be non-negative")
        return value


class DataConfig(BaseModel):
    seed: int = 7
    train_size: int = 5000
    eval_size: int = 500
    source_resolution: Literal[32, 48] = 48
    # Side of each scene's source image, drawn per scene.
    source_sizes: List[int] = Field(default_factory=lambda: [40, 48, 64])

    @field_validator("source_sizes")
    @classmethod
    def _renderable(cls, sizes: List[int]) -> List[int]:
        if not sizes:
            raise ValueError("source_sizes must not be empty")
        if min(sizes) < 12:
            raise ValueError(f"source sizes must be at least 12px, got {min(sizes)}")
        return sizes


def default_stages() -> Dict[str, StageConfig]:
    """Step counts calibrated for a single-CPU toy run."""
    frozen = ["tokenizer.encoder", "tokenizer.discrete"]
    return {
        "tokenizer": StageConfig(stage="tokenizer", steps=1500, batch_size=16, lr=3e-4),
        "proxy-quantizer": StageConfig(stage="proxy-quantizer", steps=800, batch_size=32, lr=1e-3),
        "llm-pretrain": StageConfig(stage="llm-pretrain", steps=3000, batch_size=16, lr=3e-4,
                                    mix=MixRatios.from_tuple(PRETRAIN_MIX), freeze=frozen),
        "llm-cpt": StageConfig(stage="llm-cpt", steps=0, batch_size=16, lr=2e-4,
                               mix=MixRatios.from_tuple(PRETRAIN_MIX), freeze=frozen),
        "llm-sft": StageConfig(stage="llm-sft", steps=600, batch_size=16, lr=1e-4,
                               mix=MixRatios.from_tuple(SFT_MIX), freeze=frozen),
        "decoder-1": StageConfig(stage="decoder-1", steps=2000, batch_size=16, lr=3e-4),
        "decoder-2": StageConfig(stage="decoder-2", steps=500, batch_size=8, lr=1e-4),
    }


class RunConfig(BaseModel):
    """Everything a run needs; the JSON config file validates against this model."""

    seed: int = 0
    data: DataConfig = Field(default_factory=DataConfig)
    vit: ViTConfig = Field(default_factory=ViTConfig)
    fsq: FSQConfig = Field(default_factory=FSQConfig)
    small_decoder: DecoderConfig = Field(default_factory=lambda: DecoderConfig(depth=2))
    llm: DecoderConfig = Field(default_factory=DecoderConfig)
    dit: DiTConfig = Field(default_factory=DiTConfig)
    stage2_resolution: int = 48
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    stages: Dict[str, StageConfig] = Field(default_factory=default_stages)
    run_cpt: bool = False
    progress: bool = Field(default_factory=lambda: os.getenv("HMLLM_PROGRESS", "true").lower() == "true")

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.small_decoder.d_model != self.llm.d_model:
            raise ValueError("tokenizer adapters project to one d_model; small_decoder and llm must agree")
        for name, stage in self.stages.items():
            if stage.stage != name:
                raise ValueError(f"stage entry {name!r} declares stage {stage.stage!r}")
        if self.stage2_resolution % self.dit.patch_size:
            raise ValueError("stage2_resolution must be divisible by the DiT patch size")
        return self

    def stage(self, name: str) -> StageConfig:
        if name not in self.stages:
            raise ContractError(f"no stage named {name!r} in config")
        return self.stages[name]


def runs_dir() -> Path:
    return Path(os.getenv("HMLLM_RUNS_DIR", "runs"))


def parse_override(text: str) -> Tuple[List[str], Any]:
    """Split 'a.b.c=value' into a key path and a JSON-or-string value."""
    if "=" not in text:
        raise ContractError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ContractError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(document: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply dotted overrides to a raw config document in place and return it."""
    for text in overrides:
        path, value = parse_override(text)
        node = document
        for part in path[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[path[-1]] = value
    return document


def validate_run_config(document: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        raise ContractError(f"invalid run config: {exc}") from exc


def load_run_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Load a JSON run config over the defaults and apply dotted overrides."""
    document = RunConfig().model_dump(mode="json")
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise FormatError(f"config {path} must hold a JSON object")
        _deep_merge(document, loaded)
    apply_overrides(document, overrides)
    return validate_run_config(document)


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> None:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value


def write_effective_config(config: RunConfig, out_dir: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = config.model_dump(mode="json")
    if extra:
        payload.update(extra)
    path = out_dir / "effective-config.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return path
