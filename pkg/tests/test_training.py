import numpy as np
import pytest

from core.nn import Linear, MLP, module_hash
from core.optim import AdamW
from core.tensor import Parameter
from data.qa import QA_KINDS
from evaluation.suite import EvalSettings, evaluate_bundle, headline
from training.ablation import run_ablation
from training.bundle import ModelBundle, checkpoint_path, find_checkpoint, load_tokenizer
from training.checkpoint import (
    MAGIC,
    CheckpointManifest,
    build_manifest,
    load_checkpoint,
    read_header,
    restore_module,
    save_checkpoint,
)
from training.coordinator import PIPELINE, StageCoordinator
from training.mixture import MixSampler
from training.sweep import assert_only_llm_differs, scaling_sweep, size_config, sweep_trend
from training.variants import VARIANT_KINDS, build_variant, drop_component, scaled_steps, with_seed
from utils.config import PRETRAIN_MIX, SFT_MIX, MixRatios, RunConfig, load_run_config
from utils.errors import CheckpointFormatError, ContractError, FormatError
from utils.logger import LossLog


def small_manifest() -> CheckpointManifest:
    mlp = MLP(3, 4, 2, np.random.default_rng(0))
    return build_manifest({"mlp": mlp}, {"stage": "unit", "steps_done": 3})


def test_checkpoint_save_load_save_is_byte_identical(tmp_path):
    first = save_checkpoint(small_manifest(), tmp_path / "a.mnz")
    second = save_checkpoint(load_checkpoint(first), tmp_path / "b.mnz")
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:4] == MAGIC
    version, metadata = read_header(first)
    assert version == 1 and metadata["steps_done"] == 3


def test_restore_module_reproduces_parameters(tmp_path):
    source = MLP(3, 4, 2, np.random.default_rng(0))
    path = save_checkpoint(build_manifest({"mlp": source}), tmp_path / "m.mnz")
    target = MLP(3, 4, 2, np.random.default_rng(9))
    assert module_hash(target) != module_hash(source)
    restore_module(load_checkpoint(path), "mlp", target)
    assert module_hash(target) == module_hash(source)
    with pytest.raises(ContractError):
        restore_module(load_checkpoint(path), "llm", target)


def test_manifest_rejects_duplicate_names():
    manifest = CheckpointManifest()
    manifest.add("w", np.zeros(2))
    with pytest.raises(ContractError):
        manifest.add("w", np.ones(2))


@pytest.mark.parametrize("corrupt", [
    lambda data: b"XXXX" + data[4:],
    lambda data: data[:-5] + bytes([data[-5] ^ 0xFF]) + data[-4:],
    lambda data: data[:-2],
    lambda data: data + b"\x00",
])
def test_corrupt_checkpoints_report_an_offset(tmp_path, corrupt):
    data = small_manifest().to_bytes()
    path = tmp_path / "bad.mnz"
    path.write_bytes(corrupt(data))
    with pytest.raises(CheckpointFormatError) as info:
        load_checkpoint(path)
    assert 0 <= info.value.offset <= len(data) + 1
    assert isinstance(info.value, FormatError)


def test_bad_magic_points_at_byte_zero():
    data = small_manifest().to_bytes()
    with pytest.raises(CheckpointFormatError) as info:
        CheckpointManifest.from_bytes(b"NOPE" + data[4:])
    assert info.value.offset == 0


def test_missing_checkpoint_is_a_format_error(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "nowhere.mnz")


def test_int64_tensors_survive_a_checkpoint_exactly(tmp_path):
    optimizer = AdamW([("w", Parameter(np.zeros(2)))], lr=0.01)
    optimizer.step_count = 2 ** 25 + 1
    path = save_checkpoint(build_manifest({}, {}, {"optim": optimizer.state_dict()}), tmp_path / "optim.mnz")
    loaded = load_checkpoint(path)
    assert loaded.tensors["optim.step"].dtype == np.int64
    assert int(loaded.tensors["optim.step"][0]) == 2 ** 25 + 1
    assert loaded.to_bytes() == path.read_bytes()


@pytest.mark.parametrize("ratios", [PRETRAIN_MIX, SFT_MIX])
def test_mix_sampler_matches_ratios(ratios):
    draws = 20_000
    counts = MixSampler(ratios, seed=11).counts(draws)
    for task, weight in zip(("understanding", "generation", "text"), ratios):
        assert abs(counts[task] / draws - weight) <= 0.02


def test_mix_sampler_is_deterministic():
    assert MixSampler(SFT_MIX, seed=3).counts(500) == MixSampler(SFT_MIX, seed=3).counts(500)


def test_drop_component_renormalizes():
    mix, kept = drop_component(MixRatios.from_tuple(PRETRAIN_MIX), "gen")
    assert kept == pytest.approx(0.6)
    assert mix.gen == 0.0
    assert mix.und == pytest.approx(0.4 / 0.6)
    assert scaled_steps(1000, kept) == 600
    with pytest.raises(ContractError):
        drop_component(MixRatios(und=0.0, gen=1.0, text=0.0), "gen")


def test_variants_route_and_rescale():
    base = RunConfig()
    for kind in VARIANT_KINDS:
        config, spec = build_variant(kind, base)
        assert spec.kind == kind
    _, discrete = build_variant("pure-discrete", base)
    assert discrete.adapter == "discrete"
    _, proxy = build_variant("dual-encoder-proxy", base)
    assert proxy.generation_source == "proxy"
    und_only, _ = build_variant("und-only", base)
    sft = und_only.stages["llm-sft"]
    assert sft.mix.gen == 0.0
    assert sft.steps == round(base.stages["llm-sft"].steps * (1.0 - SFT_MIX[1]))
    assert base.stages["llm-sft"].mix.gen == pytest.approx(SFT_MIX[1])
    with pytest.raises(ContractError):
        build_variant("bogus", base)


def test_with_seed_keeps_the_data():
    config = with_seed(RunConfig(), 5)
    assert config.seed == 5
    assert all(stage.seed == 5 for stage in config.stages.values())
    assert config.data.seed == RunConfig().data.seed


def test_size_configs_differ_only_in_the_decoder():
    base = RunConfig()
    configs = [size_config(base, size) for size in ("S", "M")]
    assert configs[0].llm.depth < configs[1].llm.depth
    assert_only_llm_differs(configs)
    changed = configs[1].model_copy(update={"seed": 99})
    with pytest.raises(ContractError):
        assert_only_llm_differs([configs[0], changed])


def test_sweep_trend_counts_wins():
    rows = [{"understanding": 0.2, "generation": 0.3, "fidelity_psnr": 20.0},
            {"understanding": 0.4, "generation": 0.2, "fidelity_psnr": 21.0}]
    trend = sweep_trend(rows)
    assert trend["families"] == {"understanding": True, "generation": False, "fidelity_psnr": True}
    assert trend["monotone"]


def test_stage_prerequisites(tmp_path, tiny_config):
    coordinator = StageCoordinator(tiny_config, tmp_path)
    assert coordinator.prerequisites("tokenizer") == ()
    assert coordinator.prerequisites("llm-sft") == ("llm-pretrain",)
    assert coordinator.prerequisites("decoder-2") == ("tokenizer", "decoder-1")
    with pytest.raises(ContractError):
        coordinator.require("llm-pretrain")
    with pytest.raises(ContractError):
        coordinator.prerequisites("decoder-3")
    assert "llm-pretrain" in PIPELINE


def test_prerequisites_fall_back_to_base_dir(tmp_path, tiny_config):
    base = tmp_path / "base"
    save_checkpoint(build_manifest({"lin": Linear(2, 2, np.random.default_rng(0))}),
                    checkpoint_path(base, "tokenizer"))
    coordinator = StageCoordinator(tiny_config, tmp_path / "run", base_dir=base)
    assert coordinator.require("llm-pretrain") == {"tokenizer": checkpoint_path(base, "tokenizer")}
    assert find_checkpoint("tokenizer", tmp_path / "run") is None


def test_tokenizer_stage_writes_a_loadable_checkpoint(tmp_path, tiny_config):
    coordinator = StageCoordinator(tiny_config, tmp_path)
    summary = coordinator.run_stage("tokenizer", steps=1)
    path = checkpoint_path(tmp_path, "tokenizer")
    assert summary["checkpoint"] == str(path)
    assert (tmp_path / "data" / "train.jsonl").exists()
    manifest = load_checkpoint(path)
    assert manifest.metadata["steps_done"] == 1
    tokenizer = load_tokenizer(manifest, path)
    assert tokenizer.tokens_per_image == 16

    resumed = coordinator.run_stage("tokenizer", steps=1, resume=True)
    assert load_checkpoint(resumed["checkpoint"]).metadata["steps_done"] == 2


def test_loss_log_resume_keeps_earlier_rows(tmp_path):
    path = str(tmp_path / "logs" / "stage.csv")
    LossLog(path, 1).record(1, {"text": 1.0})
    LossLog(path, 1, resume=True, offset=1).record(1, {"text": 0.5})
    lines = (tmp_path / "logs" / "stage.csv").read_text(encoding="utf-8").splitlines()
    assert lines == ["step,task,loss", "1,text,1.000000", "2,text,0.500000"]
    LossLog(path, 1)
    assert (tmp_path / "logs" / "stage.csv").read_text(encoding="utf-8").splitlines() == ["step,task,loss"]


def test_resumed_stage_appends_to_its_loss_log(tmp_path, tiny_overrides):
    config = load_run_config(None, tiny_overrides + ["stages.tokenizer.log_every=1"])
    coordinator = StageCoordinator(config, tmp_path)
    log = tmp_path / "logs" / "tokenizer.csv"
    coordinator.run_stage("tokenizer", steps=2)
    first = log.read_text(encoding="utf-8").splitlines()
    assert len(first) > 1
    coordinator.run_stage("tokenizer", steps=1, resume=True)
    second = log.read_text(encoding="utf-8").splitlines()
    assert second[:len(first)] == first
    assert len(second) > len(first)
    assert second.count("step,task,loss") == 1
    assert second[-1].startswith("3,total,")


def test_resume_with_zero_steps_reproduces_eval_metrics(tmp_path, tiny_config):
    coordinator = StageCoordinator(tiny_config, tmp_path)
    summaries = coordinator.run_pipeline()
    train, held_out = coordinator.corpora()
    decoder_two = next(s for s in summaries if s["stage"] == "decoder-2")["metrics"]
    small = sum(r.source_size < tiny_config.stage2_resolution for r in train)
    assert decoder_two["dropped"] == small > 0
    assert decoder_two["kept"] + decoder_two["dropped"] == len(train)

    settings = EvalSettings(seed=0, prompts_per_category=1, understanding_limit=4, reconstruction_images=2,
                            fidelity_prompts=2, keep_images=2)
    before = headline(evaluate_bundle(ModelBundle.load(tmp_path, sample_steps=2), held_out, settings)[0])
    for summary in summaries:
        coordinator.run_stage(summary["stage"], steps=0, resume=True)
        manifest = load_checkpoint(checkpoint_path(tmp_path, summary["stage"]))
        assert manifest.metadata["steps_done"] == summary["steps"]
    after = headline(evaluate_bundle(ModelBundle.load(tmp_path, sample_steps=2), held_out, settings)[0])
    assert after == before


SMALL_EVAL = EvalSettings(prompts_per_category=1, understanding_limit=6, reconstruction_images=0,
                          fidelity_prompts=2, keep_images=0)


def test_tiny_ablation_fills_every_verdict_field(tmp_path, tiny_config):
    verdict = run_ablation(tiny_config, tmp_path, seeds=(0, 1), settings=SMALL_EVAL)
    assert (tmp_path / "verdict.json").exists()
    assert verdict.variants == ["gen-only", "hybrid", "pure-discrete", "und-only"]
    tokenizer = verdict.tokenizer
    assert tokenizer.overall.delta is not None and tokenizer.overall.noise is not None
    assert isinstance(tokenizer.hybrid_not_worse, bool)
    assert isinstance(tokenizer.margin_exceeds_noise, bool)
    assert tokenizer.largest_gap_kind in QA_KINDS
    assert isinstance(verdict.task_conflict.understanding_on_par, bool)
    assert isinstance(verdict.task_conflict.generation_on_par, bool)


def test_tiny_scaling_sweep_reports_a_trend(tmp_path, tiny_config):
    rows = scaling_sweep(tiny_config, ["S", "M"], tmp_path, settings=SMALL_EVAL)
    assert [row["size"] for row in rows] == ["S", "M"]
    assert rows[0]["parameters"] < rows[1]["parameters"]
    assert (tmp_path / "scaling.csv").exists()
    trend = sweep_trend(rows)
    assert set(trend["families"]) == {"understanding", "generation", "fidelity_psnr"}
    assert all(isinstance(v, bool) for v in trend["families"].values())
    assert trend["monotone"] == (trend["wins"] >= 2)
