"""Evaluation harness: oracle detector, category scoring, accuracy, ablations and reports."""

from evaluation.ablation import AblationVerdict, VariantMetrics, ablation_compare, read_verdict, write_verdict
from evaluation.detector import DetectedScene, detect_objects
from evaluation.geneval import (
    CATEGORIES,
    CategoryScores,
    OracleGenerator,
    PromptItem,
    RandomSceneGenerator,
    build_prompt_set,
    read_prompt_set,
    shape_eval,
    write_prompt_set,
)
from evaluation.reconstruction import ReconstructionStats, fidelity_psnr, psnr, reconstruction_probe
from evaluation.report import emit_report, line_plot_svg, read_metrics
from evaluation.suite import EvalSettings, evaluate_bundle, headline
from evaluation.understanding import (
    DetectorAnswerer,
    MajorityAnswerer,
    UnderstandingScores,
    understanding_eval,
)

__all__ = [
    "AblationVerdict",
    "CATEGORIES",
    "CategoryScores",
    "DetectedScene",
    "DetectorAnswerer",
    "EvalSettings",
    "MajorityAnswerer",
    "OracleGenerator",
    "PromptItem",
    "RandomSceneGenerator",
    "ReconstructionStats",
    "UnderstandingScores",
    "VariantMetrics",
    "ablation_compare",
    "build_prompt_set",
    "detect_objects",
    "emit_report",
    "evaluate_bundle",
    "fidelity_psnr",
    "headline",
    "line_plot_svg",
    "psnr",
    "read_metrics",
    "read_prompt_set",
    "read_verdict",
    "reconstruction_probe",
    "shape_eval",
    "understanding_eval",
    "write_prompt_set",
    "write_verdict",
]
