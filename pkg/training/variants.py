"""Ablation variants as transformations of a base run configuration."""

from typing import Literal, Tuple

from pydantic import BaseModel, ConfigDict

from utils.config import MixRatios, RunConfig
from utils.errors import ContractError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

VARIANT_KINDS = ("hybrid", "pure-discrete", "dual-encoder-proxy", "und-only", "gen-only")
LLM_STAGES = ("llm-pretrain", "llm-cpt", "llm-sft")


class VariantSpec(BaseModel):
    """How a variant routes data through the shared models."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["hybrid", "pure-discrete", "dual-encoder-proxy", "und-only", "gen-only"] = "hybrid"
    adapter: Literal["continuous", "discrete"] = "continuous"
    generation_source: Literal["tokenizer", "proxy"] = "tokenizer"


def drop_component(mix: MixRatios, component: str) -> Tuple[MixRatios, float]:
    """Zero one mixture component and renormalize; returns the new mix and the kept mass."""
    values = {"und": mix.und, "gen": mix.gen, "text": mix.text}
    values[component] = 0.0
    kept = sum(values.values())
    if kept <= 0.0:
        raise ContractError(f"dropping {component!r} leaves an empty mixture")
    return MixRatios(**{k: v / kept for k, v in values.items()}), kept


def scaled_steps(steps: int, kept: float) -> int:
    """Steps that keep the remaining tasks' exposure equal to the full mixture's."""
    return int(round(steps * kept))


def build_variant(kind: str, base: RunConfig) -> Tuple[RunConfig, VariantSpec]:
    """The base config adjusted for `kind`, plus the routing the stage runner applies."""
    if kind not in VARIANT_KINDS:
        raise ContractError(f"unknown variant {kind!r}; expected one of {VARIANT_KINDS}")
    config = base.model_copy(deep=True)
    if kind == "pure-discrete":
        spec = VariantSpec(kind=kind, adapter="discrete")
    elif kind == "dual-encoder-proxy":
        spec = VariantSpec(kind=kind, generation_source="proxy")
    else:
        spec = VariantSpec(kind=kind)

    if kind in ("und-only", "gen-only"):
        dropped = "gen" if kind == "und-only" else "und"
        for name in LLM_STAGES:
            if name not in config.stages:
                continue
            stage = config.stages[name]
            mix, kept = drop_component(stage.mix, dropped)
            config.stages[name] = stage.model_copy(update={"mix": mix, "steps": scaled_steps(stage.steps, kept)})

    log_component_call(logger, "Variants", f"Built {kind}", {
        "adapter": spec.adapter, "generation_source": spec.generation_source,
        "llm_steps": {n: config.stages[n].steps for n in LLM_STAGES if n in config.stages},
    })
    return config, spec


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Same run with every model and stage seed replaced; the data seed is kept."""
    config = config.model_copy(deep=True)
    config.seed = seed
    config.stages = {name: stage.model_copy(update={"seed": seed}) for name, stage in config.stages.items()}
    return config
