"""Acceptance runner: each scenario checks one property end to end and writes a report to outputs/."""

import os
import sys
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from core.nn import Block, module_hash
from core.ops import rmsnorm, round_ste
from core.tensor import Parameter, Tensor, matmul, mul, tsum
from data.corpus import build_splits
from data.render import render
from data.rng import Pcg32
from data.scenes import sample_scene
from evaluation.detector import detect_objects
from evaluation.suite import EvalSettings, evaluate_bundle, headline
from llm.decoder import TransformerDecoder
from llm.generation import Sampler, generate_image_sequence
from llm.loss import combine_losses
from llm.trainer import UnifiedTrainer
from llm.vocab import Vocabulary
from pixel.dit import DiT
from pixel.flow import FlowSample, GaussianMixture, VelocityMLP, euler_integrate, flow_matching_loss, \
    train_velocity_field
from tests.gradcheck import gradcheck
from tokenizer.fsq import FSQ, lattice_preimage
from tokenizer.hybrid import HybridTokenizer
from tokenizer.stc import FeatureGrid, stc_inverse, stc_rearrange
from training.ablation import run_ablation
from training.bundle import ModelBundle
from training.checkpoint import CheckpointManifest, build_manifest, load_checkpoint, save_checkpoint
from training.coordinator import StageCoordinator
from training.mixture import MixSampler
from training.sweep import scaling_sweep, sweep_trend
from utils.config import PRETRAIN_MIX, SFT_MIX, DecoderConfig, DiTConfig, FSQConfig, LossWeights, \
    SamplerConfig, StageConfig, ViTConfig, load_run_config
from utils.errors import CheckpointFormatError
from utils.logger import setup_logger

logger = setup_logger(__name__)

# Ensure outputs directory exists
os.makedirs("outputs", exist_ok=True)

Report = List[str]


def section(output: Report, title: str) -> None:
    output.append(title)
    output.append("-" * 40)


def verdict(output: Report, ok: bool) -> bool:
    output.append("")
    output.append("=" * 80)
    output.append(f"RESULT: {'PASS' if ok else 'FAIL'}")
    output.append("=" * 80)
    return ok


def scenario_fsq_codebook(output: Report) -> bool:
    fsq = FSQ(FSQConfig(levels=[5, 5, 5]))
    indices = np.arange(fsq.codebook_size)
    codes = fsq.to_codes(indices)
    bijective = np.array_equal(fsq.to_index(codes), indices) and len({tuple(c) for c in codes}) == 125
    z = Parameter(lattice_preimage(codes, fsq.levels))
    recovered, quantized = fsq.quantize(z)
    on_lattice = np.array_equal(recovered, codes) and np.allclose(quantized.data, np.rint(quantized.data))
    tsum(round_ste(z)).backward()
    identity = np.allclose(z.grad, 1.0)
    bound = float(fsq.bound(Tensor(np.full((1, 3), 10.0))).data.max())
    section(output, "FSQ CODEBOOK (levels 5,5,5):")
    output.append(f"Codebook size: {fsq.codebook_size}")
    output.append(f"Index <-> code bijection: {bijective}")
    output.append(f"Lattice preimages quantize back: {on_lattice}")
    output.append(f"Straight-through gradient is identity: {identity}")
    output.append(f"Bound at z=10: {bound:.6f} (expected 2.0)")
    return verdict(output, bijective and on_lattice and identity and abs(bound - 2.0) < 1e-4)


def _tiny_dit(rng: np.random.Generator) -> DiT:
    config = DiTConfig(resolution=8, patch_size=4, d=8, depth=2, heads=2, mlp_ratio=2, sample_steps=2)
    dit = DiT(config, cond_dim=4, cond_tokens=4, seed=1)
    dit.modulation.data = rng.normal(0.0, 0.3, size=dit.modulation.shape).astype(np.float32)
    dit.ada.weight.data = rng.normal(0.0, 0.3, size=dit.ada.weight.shape).astype(np.float32)
    dit.out.weight.data = rng.normal(0.0, 0.3, size=dit.out.weight.shape).astype(np.float32)
    return dit


def gradient_cases() -> Dict[str, Callable]:
    rng = np.random.default_rng(0)

    def matmul_case():
        a = Parameter(rng.normal(size=(3, 4)))
        b = Parameter(rng.normal(size=(4, 5)))
        w = rng.normal(size=(3, 5))
        return (lambda: tsum(mul(matmul(a, b), Tensor(w)))), [a, b], None

    def rmsnorm_case():
        x = Parameter(rng.normal(size=(4, 6)))
        gain = Parameter(rng.normal(1.0, 0.1, size=(6,)))
        w = rng.normal(size=(4, 6))
        return (lambda: tsum(mul(rmsnorm(x, gain), Tensor(w)))), [x, gain], None

    def attention_block_case():
        block = Block(8, 2, np.random.default_rng(2), mlp_ratio=2, causal=True)
        x = rng.normal(size=(5, 8))
        w = rng.normal(size=(5, 8))
        return (lambda: tsum(mul(block(Tensor(x)), Tensor(w)))), block.parameters(), None

    def fsq_bypass_case():
        fsq = FSQ(FSQConfig(levels=[5, 5, 5]))
        z = Parameter(rng.normal(size=(4, 3)))
        w = rng.normal(size=(4, 3))
        rounded = lambda: tsum(mul(round_ste(fsq.bound(z)), Tensor(w)))
        smooth = lambda: tsum(mul(fsq.bound(z), Tensor(w)))
        return rounded, [z], smooth

    def adaln_case():
        dit = _tiny_dit(rng)
        sample = FlowSample(x0=rng.normal(size=(2, 4, 48)), x1=rng.uniform(-1, 1, size=(2, 4, 48)),
                            t=np.array([0.25, 0.7]))
        cond = rng.normal(size=(2, 4, 4))
        return (lambda: flow_matching_loss(sample, cond, dit)), [dit.modulation, dit.ada.weight], None

    def cfm_case():
        dit = _tiny_dit(rng)
        sample = FlowSample(x0=rng.normal(size=(2, 4, 48)), x1=rng.uniform(-1, 1, size=(2, 4, 48)),
                            t=np.array([0.1, 0.9]))
        cond = rng.normal(size=(2, 4, 4))
        return (lambda: flow_matching_loss(sample, cond, dit)), dit.parameters(), None

    return {
        "matmul": matmul_case,
        "rmsnorm": rmsnorm_case,
        "attention block": attention_block_case,
        "fsq bypass": fsq_bypass_case,
        "adaln modulation": adaln_case,
        "cfm loss": cfm_case,
    }


def scenario_autodiff(output: Report) -> bool:
    section(output, "FINITE-DIFFERENCE GRADIENT CHECKS (h=1e-3, float64):")
    ok = True
    for name, build in gradient_cases().items():
        loss_fn, params, reference = build()
        result = gradcheck(loss_fn, params, max_per_param=8, reference_fn=reference)
        passed = result.max_rel_err < 1e-3
        ok = ok and passed
        output.append(f"{name:>18}: {result.checked} coords, max rel err {result.max_rel_err:.2e} "
                      f"[{'ok' if passed else 'FAIL'}]")
    return verdict(output, ok)


def scenario_stc(output: Report) -> bool:
    rng = np.random.default_rng(0)
    toy = FeatureGrid(Tensor(rng.normal(size=(2, 144, 16))))
    folded = stc_rearrange(toy)
    restored = stc_inverse(folded)
    exact = np.array_equal(restored.data.data, toy.data.data)
    wide = stc_rearrange(FeatureGrid(Tensor(np.zeros((42 * 42, 1024), dtype=np.float32))))
    section(output, "SPATIAL-TO-CHANNEL:")
    output.append(f"Toy grid: {toy.side}x{toy.side}x{toy.d} -> {folded.side}x{folded.side}x{folded.d}")
    output.append(f"Token reduction: {toy.data.shape[-2] // folded.data.shape[-2]}x")
    output.append(f"Inverse restores input exactly: {exact}")
    output.append(f"Full-size grid: 42x42x1024 -> {wide.side}x{wide.side}x{wide.d}")
    ok = exact and folded.data.shape == (2, 16, 144) and (wide.side, wide.d) == (14, 9216)
    return verdict(output, ok)


def scenario_loss_mix(output: Report) -> bool:
    total = combine_losses(Tensor(np.float32(2.0)), Tensor(np.float32(1.0)), LossWeights()).item()
    section(output, "UNIFIED LOSS WEIGHTING:")
    output.append("L_text = 2.0, L_image = 1.0, weights (1.0, 0.5)")
    output.append(f"Combined: {total:.7f} (expected 2.5)")
    return verdict(output, abs(total - 2.5) < 1e-6)


def scenario_freeze_invariance(output: Report) -> bool:
    train, _ = build_splits(seed=1, train_size=24, eval_size=4, resolution=48)
    vit = ViTConfig(image_size=48, patch_size=4, d_vit=16, depth=1, heads=2)
    tokenizer = HybridTokenizer(vit, FSQConfig(levels=[5, 5, 5]), d_model=32, seed=0)
    vocab = Vocabulary(k=tokenizer.codebook_size)
    model = TransformerDecoder(DecoderConfig(d_model=32, depth=1, heads=2, max_seq_len=160, mlp_ratio=2),
                               vocab, seed=0)
    stage = StageConfig(stage="llm-pretrain", steps=500, batch_size=2, lr=3e-3,
                        freeze=["tokenizer.encoder", "tokenizer.discrete"])
    encoder_before = module_hash(tokenizer.encoder)
    discrete_before = module_hash(tokenizer.discrete)
    llm_before = module_hash(model)
    trainer = UnifiedTrainer(model, tokenizer, train, stage, MixSampler(stage.mix, seed=0),
                             generation_codes=tokenizer.encode_codes(train.images), progress_bar=False)
    trainer.train()
    unchanged = (module_hash(tokenizer.encoder) == encoder_before
                 and module_hash(tokenizer.discrete) == discrete_before)
    moved = module_hash(model) != llm_before
    section(output, "FROZEN TOKENIZER DURING UNIFIED TRAINING:")
    output.append(f"Steps trained: {stage.steps}")
    output.append(f"Encoder + discrete adapter SHA-256 unchanged: {unchanged}")
    output.append(f"Decoder weights updated: {moved}")
    return verdict(output, unchanged and moved)


def scenario_mixture_ratios(output: Report) -> bool:
    draws = 100_000
    section(output, f"TASK MIXTURE OVER {draws} DRAWS:")
    ok = True
    for label, ratios in (("pretrain", PRETRAIN_MIX), ("sft", SFT_MIX)):
        counts = MixSampler(ratios, seed=0).counts(draws)
        observed = [counts[task] / draws for task in ("understanding", "generation", "text")]
        within = all(abs(o - r) <= 0.02 for o, r in zip(observed, ratios))
        ok = ok and within
        output.append(f"{label:>8}: target {ratios} observed {tuple(round(o, 4) for o in observed)} "
                      f"[{'ok' if within else 'FAIL'}]")
    return verdict(output, ok)


def scenario_flow_oracle(output: Report) -> bool:
    mixture = GaussianMixture.two_modes()
    field = VelocityMLP(seed=0)
    final_loss = train_velocity_field(field, mixture, steps=2000, seed=0)
    points = euler_integrate(np.random.default_rng(1).standard_normal((1000, 2)), field, 50)
    summary = mixture.summarize(points)
    mean_err = max(float(np.abs(np.asarray(m) - t).max()) for m, t in zip(summary["means"], mixture.means))
    weight_err = max(abs(w - 0.5) for w in summary["weights"])
    section(output, "FLOW MATCHING ON A TWO-MODE MIXTURE:")
    output.append(f"Final training loss: {final_loss:.4f}")
    output.append(f"Recovered means: {[[round(v, 3) for v in m] for m in summary['means']]}")
    output.append(f"Recovered weights: {[round(w, 3) for w in summary['weights']]}")
    output.append(f"Max mean error: {mean_err:.3f} (tolerance 0.15)")
    output.append(f"Max weight error: {weight_err:.3f} (tolerance 0.1)")
    return verdict(output, mean_err <= 0.15 and weight_err <= 0.1)


def scenario_constrained_decoding(output: Report) -> bool:
    side = 4
    vocab = Vocabulary(k=125)
    model = TransformerDecoder(DecoderConfig(d_model=16, depth=1, heads=2, max_seq_len=160, mlp_ratio=2),
                               vocab, seed=0)
    sampler = Sampler(SamplerConfig(temperature=1.0, top_k=0), rng=Pcg32(0, 1))
    rng = Pcg32(0, 2)
    trials, bad = 1000, 0
    for _ in range(trials):
        prompt = [rng.randrange(vocab.v_text) for _ in range(rng.randrange(1, 12))]
        ids = generate_image_sequence(prompt, model, side, sampler)
        start = int(np.flatnonzero(ids == vocab.boi)[0])
        span = ids[start + 1:-1]
        if ids[-1] != vocab.eoi or len(span) != side * side or not all(vocab.is_image(int(t)) for t in span):
            bad += 1
    section(output, "CONSTRAINED IMAGE-TOKEN DECODING:")
    output.append(f"Generations: {trials}, tokens per image: {side * side}")
    output.append(f"Malformed image spans: {bad}")
    return verdict(output, bad == 0)


def scenario_detector_duality(output: Report) -> bool:
    rng = Pcg32(11, 0)
    section(output, "RENDER / DETECT DUALITY:")
    ok = True
    for resolution in (32, 48):
        misses = 0
        for _ in range(1000):
            spec = sample_scene(rng)
            if not detect_objects(render(spec, resolution)).matches(spec):
                misses += 1
        ok = ok and misses == 0
        output.append(f"{resolution}px: {misses} mismatches in 1000 scenes")
    return verdict(output, ok)


def scenario_checkpoint_format(output: Report) -> bool:
    tokenizer = HybridTokenizer(ViTConfig(image_size=48, patch_size=4, d_vit=16, depth=1, heads=2),
                                FSQConfig(levels=[5, 5, 5]), d_model=16, seed=0)
    manifest = build_manifest({"tokenizer": tokenizer}, {"stage": "tokenizer", "steps": 0})
    with tempfile.TemporaryDirectory() as tmp:
        first = save_checkpoint(manifest, Path(tmp) / "a.mnz")
        second = save_checkpoint(load_checkpoint(first), Path(tmp) / "b.mnz")
        identical = first.read_bytes() == second.read_bytes()
        corrupted = bytearray(first.read_bytes())
        corrupted[-10] ^= 0xFF
    try:
        CheckpointManifest.from_bytes(bytes(corrupted))
        caught = None
    except CheckpointFormatError as exc:
        caught = exc
    section(output, "CHECKPOINT ARCHIVE:")
    output.append(f"Tensors: {len(manifest.tensors)}")
    output.append(f"save -> load -> save byte-identical: {identical}")
    output.append(f"Flipped payload byte rejected: {caught is not None}"
                  + (f" ({caught} at offset {caught.offset})" if caught else ""))
    return verdict(output, identical and caught is not None)


def scenario_config():
    """Default run config, optionally from HMLLM_SCENARIO_CONFIG, plus `;`-separated HMLLM_SCENARIO_SET overrides."""
    overrides = [item.strip() for item in os.getenv("HMLLM_SCENARIO_SET", "").split(";") if item.strip()]
    return load_run_config(os.getenv("HMLLM_SCENARIO_CONFIG") or None, overrides)


def rounded(value):
    return None if value is None else round(float(value), 4)


def scenario_end_to_end(output: Report) -> bool:
    config = scenario_config()
    with tempfile.TemporaryDirectory() as tmp:
        coordinator = StageCoordinator(config, Path(tmp))
        coordinator.run_pipeline()
        _, held_out = coordinator.corpora()
        bundle = ModelBundle.load(Path(tmp), sampler=config.sampler)
        results, _ = evaluate_bundle(bundle, held_out, EvalSettings(seed=config.seed))
    understanding = results["understanding"]
    generation = results["generation"]
    floors = [
        ("Understanding exact match, color questions", understanding.per_kind.get("color-of"), 0.90),
        ("Understanding exact match, overall", understanding.overall, 0.80),
        ("shape_eval single object", generation.single, 0.75),
        ("shape_eval overall", generation.overall, 0.50),
        ("Reconstruction mean PSNR (dB)", headline(results)["reconstruction_psnr"], 18.0),
    ]
    section(output, "END-TO-END TOY RUN:")
    output.append(f"Train scenes: {config.data.train_size}, eval scenes: {len(held_out)}")
    ok = True
    for label, value, floor in floors:
        passed = value is not None and value >= floor
        output.append(f"{label}: {rounded(value)} (floor {floor}) {'ok' if passed else 'BELOW'}")
        ok = ok and passed
    return verdict(output, ok)


def scenario_ablation_directions(output: Report) -> bool:
    config = scenario_config()
    with tempfile.TemporaryDirectory() as tmp:
        result = run_ablation(config, Path(tmp))
    tokenizer, conflict = result.tokenizer, result.task_conflict
    section(output, "HYBRID VS PURE-DISCRETE UNDERSTANDING:")
    output.append(f"Overall delta: {rounded(tokenizer.overall.delta)} (noise {rounded(tokenizer.overall.noise)})")
    output.append(f"Hybrid not worse: {tokenizer.hybrid_not_worse}")
    output.append(f"Margin exceeds noise: {tokenizer.margin_exceeds_noise}")
    output.append(f"Largest per-kind gap: {tokenizer.largest_gap_kind}")
    section(output, "UNIFIED VS SINGLE-TASK:")
    output.append(f"Understanding delta: {rounded(conflict.understanding.delta)} "
                  f"(noise {rounded(conflict.understanding.noise)}), on par: {conflict.understanding_on_par}")
    output.append(f"Generation delta: {rounded(conflict.generation.delta)} "
                  f"(noise {rounded(conflict.generation.noise)}), on par: {conflict.generation_on_par}")
    tokenizer_ok = bool(tokenizer.hybrid_not_worse and tokenizer.margin_exceeds_noise
                        and tokenizer.largest_gap_fine_grained)
    conflict_ok = bool(conflict.understanding_on_par and conflict.generation_on_par)
    return verdict(output, tokenizer_ok and conflict_ok)


def scenario_scaling_trend(output: Report) -> bool:
    config = scenario_config()
    with tempfile.TemporaryDirectory() as tmp:
        rows = scaling_sweep(config, ["S", "M", "L"], Path(tmp), settings=EvalSettings(seed=config.seed))
    trend = sweep_trend(rows)
    section(output, "UNIFIED DECODER SIZE SWEEP:")
    for row in rows:
        output.append(f"{row['size']} (depth {row['depth']}, {row['parameters']} parameters): "
                      f"understanding {rounded(row['understanding'])}, generation {rounded(row['generation'])}, "
                      f"fidelity PSNR {rounded(row['fidelity_psnr'])}")
    output.append(f"Largest >= smallest per family: {trend['families']}")
    output.append(f"Families won: {trend['wins']} (need 2)")
    return verdict(output, bool(trend["monotone"]))


SCENARIOS: Dict[str, Callable[[Report], bool]] = {
    "fsq_codebook": scenario_fsq_codebook,
    "autodiff": scenario_autodiff,
    "stc": scenario_stc,
    "loss_mix": scenario_loss_mix,
    "freeze_invariance": scenario_freeze_invariance,
    "mixture_ratios": scenario_mixture_ratios,
    "flow_oracle": scenario_flow_oracle,
    "constrained_decoding": scenario_constrained_decoding,
    "detector_duality": scenario_detector_duality,
    "checkpoint_format": scenario_checkpoint_format,
}

# Full-scale runs; only executed when named or with --all.
SLOW_SCENARIOS: Dict[str, Callable[[Report], bool]] = {
    "end_to_end": scenario_end_to_end,
    "ablation_directions": scenario_ablation_directions,
    "scaling_trend": scenario_scaling_trend,
}


def run_test(scenario_name: str, scenario: Callable[[Report], bool]) -> Tuple[str, bool]:
    """Run a scenario and return its formatted report."""
    output: Report = []
    output.append("=" * 80)
    output.append(f"TEST SCENARIO: {scenario_name.upper()}")
    output.append("=" * 80)
    output.append(f"\nTimestamp: {datetime.now().isoformat()}")
    output.append("-" * 80 + "\n")
    try:
        passed = scenario(output)
    except Exception as e:
        logger.error(f"Scenario {scenario_name} raised: {e}")
        output.append(f"ERROR: {str(e)}")
        passed = False
    return "\n".join(output), passed


def main(selected: List[str]) -> int:
    print("=" * 80)
    print("HYBRID MLLM ACCEPTANCE SCENARIOS")
    print("=" * 80)
    available = {**SCENARIOS, **SLOW_SCENARIOS}
    if "--all" in selected:
        names = list(available)
    else:
        names = selected or list(SCENARIOS)
    unknown = [name for name in names if name not in available]
    if unknown:
        print(f"unknown scenarios: {unknown}; choose from {list(available)} or --all")
        return 64
    failures = 0
    for name in names:
        print(f"\nRunning {name}...")
        report, passed = run_test(name, available[name])
        path = os.path.join("outputs", f"{name}.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(report)
        print(f"{'✓' if passed else '✗'} Saved to {path}")
        failures += int(not passed)
    print("\n" + "=" * 80)
    print(f"{len(names) - failures}/{len(names)} scenarios passed")
    print("=" * 80)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
