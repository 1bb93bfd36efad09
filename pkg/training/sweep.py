"""Decoder-size scaling sweep and the shared train-then-evaluate routine behind it."""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from evaluation.report import write_csv
from evaluation.suite import EvalSettings, evaluate_bundle, headline
from training.bundle import ModelBundle, find_checkpoint, new_llm
from training.coordinator import StageCoordinator
from training.variants import VariantSpec
from utils.config import DecoderConfig, RunConfig
from utils.errors import ContractError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

SHARED_STAGES = ("tokenizer", "decoder-1", "decoder-2")
SWEEP_COLUMNS = ("size", "depth", "parameters", "understanding", "generation", "fidelity_psnr",
                 "reconstruction_psnr")
TREND_FAMILIES = ("understanding", "generation", "fidelity_psnr")


def llm_stages(config: RunConfig) -> List[str]:
    return ["llm-pretrain"] + (["llm-cpt"] if config.run_cpt else []) + ["llm-sft"]


def ensure_shared(config: RunConfig, shared_dir: Path, stages: Sequence[str] = SHARED_STAGES) -> None:
    """Train the shared stages that have no checkpoint in `shared_dir` yet."""
    coordinator = StageCoordinator(config, shared_dir)
    for stage in stages:
        if find_checkpoint(stage, shared_dir) is None:
            coordinator.run_stage(stage)
        else:
            logger.info(f"Reusing {stage} checkpoint in {shared_dir}")


def train_and_evaluate(config: RunConfig, run_dir: Path, base_dir: Optional[Path],
                       variant: Optional[VariantSpec] = None,
                       settings: Optional[EvalSettings] = None) -> Tuple[Dict[str, Any], Any]:
    """LLM stages in `run_dir` on top of the shared checkpoints, then the full evaluation."""
    coordinator = StageCoordinator(config, run_dir, base_dir, variant)
    for stage in llm_stages(config):
        coordinator.run_stage(stage)
    _, held_out = coordinator.corpora()
    bundle = ModelBundle.load(run_dir, sampler=config.sampler, base_dir=base_dir)
    return evaluate_bundle(bundle, held_out, settings)


def size_config(base: RunConfig, size: str) -> RunConfig:
    """The base run with only the unified decoder's depth changed to the preset."""
    config = base.model_copy(deep=True)
    config.llm = DecoderConfig.preset(size, d_model=base.llm.d_model, heads=base.llm.heads,
                                      max_seq_len=base.llm.max_seq_len, mlp_ratio=base.llm.mlp_ratio)
    return config


def assert_only_llm_differs(configs: Sequence[RunConfig]) -> None:
    reference = configs[0].model_dump(exclude={"llm"})
    for config in configs[1:]:
        if config.model_dump(exclude={"llm"}) != reference:
            raise ContractError("sweep points differ outside the unified decoder configuration")


def _sweep_point(args: Tuple[str, str, str, str, Dict[str, Any]]) -> Dict[str, Any]:
    size, document, run_dir, shared_dir, settings = args
    config = RunConfig.model_validate_json(document)
    results, _ = train_and_evaluate(config, Path(run_dir), Path(shared_dir),
                                    settings=EvalSettings.model_validate(settings))
    parameters = new_llm(config, config.fsq.codebook_size).num_parameters()
    return {"size": size, "depth": config.llm.depth, "parameters": parameters, **headline(results)}


def scaling_sweep(base: RunConfig, sizes: Sequence[str], out_dir: Path, jobs: int = 1,
                  settings: Optional[EvalSettings] = None) -> List[Dict[str, Any]]:
    """Train and evaluate one unified decoder per size preset over shared tokenizer and pixel decoder.

    Writes `scaling.csv` under out_dir and returns its rows in `sizes` order.
    """
    if len(sizes) < 2:
        raise ContractError("a scaling sweep needs at least two sizes")
    out_dir = Path(out_dir)
    configs = [size_config(base, size) for size in sizes]
    assert_only_llm_differs(configs)
    shared_dir = out_dir / "shared"
    ensure_shared(base, shared_dir)
    settings = settings or EvalSettings(seed=base.seed)
    work = [(size, config.model_dump_json(), str(out_dir / f"size-{size}"), str(shared_dir), settings.model_dump())
            for size, config in zip(sizes, configs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, work))
    else:
        rows = [_sweep_point(item) for item in work]
    write_csv(rows, out_dir / "scaling.csv", columns=SWEEP_COLUMNS)
    log_component_call(logger, "ScalingSweep", "Finished", {"sizes": list(sizes), "trend": sweep_trend(rows)})
    return rows


def sweep_trend(rows: Sequence[Dict[str, Any]], families: Sequence[str] = TREND_FAMILIES) -> Dict[str, Any]:
    """Whether the largest size matches or beats the smallest, per metric family."""
    smallest, largest = rows[0], rows[-1]
    checks = {}
    for family in families:
        low, high = smallest.get(family), largest.get(family)
        checks[family] = None if low is None or high is None else float(high) >= float(low)
    wins = sum(1 for v in checks.values() if v)
    return {"families": checks, "wins": wins, "monotone": wins >= 2}
