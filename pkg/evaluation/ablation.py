"""Signed deltas and direction checks between ablation variants."""

import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from utils.errors import ContractError, FormatError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

COMPARISONS = ("tokenizer", "task-conflict")
FINE_GRAINED_KINDS = ("position-of", "count-of")
NOISE_MULTIPLIER = 2.0

REQUIRED_VARIANTS = {
    "tokenizer": ("hybrid", "pure-discrete"),
    "task-conflict": ("hybrid", "und-only", "gen-only"),
}


class VariantMetrics(BaseModel):
    """What one trained variant scored; missing families stay None."""

    understanding: Optional[float] = None
    understanding_per_kind: Dict[str, float] = {}
    generation: Optional[float] = None


class MetricSummary(BaseModel):
    mean: Optional[float] = None
    std: Optional[float] = None
    seeds: int = 0


class Delta(BaseModel):
    metric: str
    reference: str
    other: str
    reference_value: Optional[float] = None
    other_value: Optional[float] = None
    delta: Optional[float] = None
    noise: Optional[float] = None


class TokenizerVerdict(BaseModel):
    overall: Delta
    per_kind: Dict[str, Delta]
    hybrid_not_worse: Optional[bool] = None
    margin_exceeds_noise: Optional[bool] = None
    largest_gap_kind: Optional[str] = None
    largest_gap_fine_grained: Optional[bool] = None


class TaskConflictVerdict(BaseModel):
    understanding: Delta
    generation: Delta
    understanding_on_par: Optional[bool] = None
    generation_on_par: Optional[bool] = None


class AblationVerdict(BaseModel):
    variants: List[str]
    tokenizer: Optional[TokenizerVerdict] = None
    task_conflict: Optional[TaskConflictVerdict] = None


Results = Mapping[str, Union[VariantMetrics, Sequence[VariantMetrics]]]


def _runs(value) -> List[VariantMetrics]:
    runs = [value] if isinstance(value, VariantMetrics) else list(value)
    return [r if isinstance(r, VariantMetrics) else VariantMetrics.model_validate(r) for r in runs]


def summarize_metric(values: Sequence[Optional[float]]) -> MetricSummary:
    present = [v for v in values if v is not None]
    if not present:
        return MetricSummary()
    std = float(np.std(present, ddof=1)) if len(present) > 1 else None
    return MetricSummary(mean=float(np.mean(present)), std=std, seeds=len(present))


def _delta(metric: str, reference: str, other: str, a: MetricSummary, b: MetricSummary) -> Delta:
    delta = a.mean - b.mean if a.mean is not None and b.mean is not None else None
    stds = [s for s in (a.std, b.std) if s is not None]
    return Delta(metric=metric, reference=reference, other=other, reference_value=a.mean, other_value=b.mean,
                 delta=delta, noise=max(stds) if stds else None)


def _within_noise(delta: Delta) -> Optional[bool]:
    if delta.delta is None or delta.noise is None:
        return None
    return abs(delta.delta) <= NOISE_MULTIPLIER * delta.noise


def compare_tokenizers(hybrid: List[VariantMetrics], discrete: List[VariantMetrics]) -> TokenizerVerdict:
    overall = _delta("understanding", "hybrid", "pure-discrete",
                     summarize_metric([r.understanding for r in hybrid]),
                     summarize_metric([r.understanding for r in discrete]))
    kinds = sorted({k for r in hybrid + discrete for k in r.understanding_per_kind})
    per_kind = {
        kind: _delta(f"understanding.{kind}", "hybrid", "pure-discrete",
                     summarize_metric([r.understanding_per_kind.get(kind) for r in hybrid]),
                     summarize_metric([r.understanding_per_kind.get(kind) for r in discrete]))
        for kind in kinds
    }
    gaps = {k: d.delta for k, d in per_kind.items() if d.delta is not None}
    largest = max(gaps, key=lambda k: (gaps[k], k)) if gaps else None
    return TokenizerVerdict(
        overall=overall,
        per_kind=per_kind,
        hybrid_not_worse=None if overall.delta is None else overall.delta >= 0.0,
        margin_exceeds_noise=(None if overall.delta is None or overall.noise is None
                              else overall.delta > NOISE_MULTIPLIER * overall.noise),
        largest_gap_kind=largest,
        largest_gap_fine_grained=None if largest is None else largest in FINE_GRAINED_KINDS,
    )


def compare_task_conflict(unified: List[VariantMetrics], und_only: List[VariantMetrics],
                          gen_only: List[VariantMetrics]) -> TaskConflictVerdict:
    understanding = _delta("understanding", "hybrid", "und-only",
                           summarize_metric([r.understanding for r in unified]),
                           summarize_metric([r.understanding for r in und_only]))
    generation = _delta("generation", "hybrid", "gen-only",
                        summarize_metric([r.generation for r in unified]),
                        summarize_metric([r.generation for r in gen_only]))
    return TaskConflictVerdict(understanding=understanding, generation=generation,
                               understanding_on_par=_within_noise(understanding),
                               generation_on_par=_within_noise(generation))


def ablation_compare(results: Results, comparisons: Sequence[str] = COMPARISONS) -> AblationVerdict:
    """Pure function of the metrics: deltas first, direction booleans derived from them."""
    runs = {name: _runs(value) for name, value in results.items()}
    verdict = AblationVerdict(variants=sorted(runs))
    for comparison in comparisons:
        if comparison not in REQUIRED_VARIANTS:
            raise ContractError(f"unknown comparison {comparison!r}; expected one of {COMPARISONS}")
        missing = [v for v in REQUIRED_VARIANTS[comparison] if not runs.get(v)]
        if missing:
            raise ContractError(f"{comparison} comparison needs metrics for {missing}")
    if "tokenizer" in comparisons:
        verdict.tokenizer = compare_tokenizers(runs["hybrid"], runs["pure-discrete"])
    if "task-conflict" in comparisons:
        verdict.task_conflict = compare_task_conflict(runs["hybrid"], runs["und-only"], runs["gen-only"])
    log_component_call(logger, "AblationCompare", "Verdict", {
        "variants": verdict.variants,
        "tokenizer_delta": verdict.tokenizer.overall.delta if verdict.tokenizer else None,
        "und_delta": verdict.task_conflict.understanding.delta if verdict.task_conflict else None,
        "gen_delta": verdict.task_conflict.generation.delta if verdict.task_conflict else None,
    })
    return verdict


def write_verdict(verdict: AblationVerdict, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(verdict.model_dump_json(indent=2), encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write verdict {path}: {exc}") from exc
    return path


def read_verdict(path: Path) -> AblationVerdict:
    path = Path(path)
    try:
        return AblationVerdict.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise FormatError(f"cannot read verdict {path}: {exc}") from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise FormatError(f"{path} is not a valid verdict document: {exc}") from exc
