"""Multi-seed ablation runs feeding the verdict comparison."""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from evaluation.ablation import (
    COMPARISONS,
    REQUIRED_VARIANTS,
    AblationVerdict,
    VariantMetrics,
    ablation_compare,
    write_verdict,
)
from evaluation.report import write_metrics
from evaluation.suite import EvalSettings
from training.sweep import SHARED_STAGES, ensure_shared, train_and_evaluate
from training.variants import VariantSpec, build_variant, with_seed
from utils.config import RunConfig
from utils.errors import ContractError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

DEFAULT_SEEDS = (0, 1, 2)


def variants_for(comparisons: Sequence[str]) -> List[str]:
    ordered: List[str] = []
    for comparison in comparisons:
        if comparison not in REQUIRED_VARIANTS:
            raise ContractError(f"unknown comparison {comparison!r}; expected one of {COMPARISONS}")
        for kind in REQUIRED_VARIANTS[comparison]:
            if kind not in ordered:
                ordered.append(kind)
    return ordered


def _variant_point(args: Tuple[str, str, str, str, Dict[str, Any]]) -> Tuple[str, Dict[str, Any]]:
    variant_json, document, run_dir, shared_dir, settings = args
    config = RunConfig.model_validate_json(document)
    variant = VariantSpec.model_validate_json(variant_json)
    results, _ = train_and_evaluate(config, Path(run_dir), Path(shared_dir), variant,
                                    EvalSettings.model_validate(settings))
    und = results["understanding"]
    metrics = VariantMetrics(understanding=und.overall, understanding_per_kind=und.per_kind,
                             generation=results["generation"].overall)
    return variant.kind, metrics.model_dump()


def run_ablation(base: RunConfig, out_dir: Path, comparisons: Sequence[str] = COMPARISONS,
                 seeds: Sequence[int] = DEFAULT_SEEDS, jobs: int = 1,
                 settings: Optional[EvalSettings] = None) -> AblationVerdict:
    """Train every required variant for every seed, evaluate, and write verdict.json.

    Each seed shares one tokenizer and pixel decoder across its variants.
    """
    out_dir = Path(out_dir)
    kinds = variants_for(comparisons)
    work = []
    for seed in seeds:
        seeded = with_seed(base, seed)
        shared_dir = out_dir / f"seed-{seed}" / "shared"
        shared_stages = SHARED_STAGES + (("proxy-quantizer",) if "dual-encoder-proxy" in kinds else ())
        ensure_shared(seeded, shared_dir, shared_stages)
        eval_settings = (settings or EvalSettings()).model_copy(update={"seed": seed})
        for kind in kinds:
            config, variant = build_variant(kind, seeded)
            work.append((variant.model_dump_json(), config.model_dump_json(),
                         str(out_dir / f"seed-{seed}" / kind), str(shared_dir), eval_settings.model_dump()))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_variant_point, work))
    else:
        outcomes = [_variant_point(item) for item in work]

    results: Dict[str, List[VariantMetrics]] = {kind: [] for kind in kinds}
    for kind, metrics in outcomes:
        results[kind].append(VariantMetrics.model_validate(metrics))
    write_metrics({kind: [m.model_dump() for m in runs] for kind, runs in results.items()},
                  out_dir / "variant-metrics.json")
    verdict = ablation_compare(results, comparisons)
    write_verdict(verdict, out_dir / "verdict.json")
    log_component_call(logger, "Ablation", "Finished", {"variants": kinds, "seeds": list(seeds)})
    return verdict
