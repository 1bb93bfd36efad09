"""Command-line entry point for data generation, training, generation, understanding and evaluation."""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from data.captions import parse_caption
from data.corpus import build_splits, write_corpus
from data.images import read_ppm, write_ppm
from evaluation.ablation import COMPARISONS
from evaluation.detector import detect_objects
from evaluation.geneval import build_prompt_set, write_prompt_set
from evaluation.report import emit_report
from evaluation.suite import EvalSettings, evaluate_bundle, headline
from training.ablation import run_ablation
from training.bundle import ModelBundle
from training.coordinator import StageCoordinator
from training.sweep import scaling_sweep, sweep_trend
from training.variants import VARIANT_KINDS, build_variant, with_seed
from utils.config import DECODER_PRESETS, RunConfig, load_run_config, runs_dir, write_effective_config
from utils.errors import CaptionParseError, ContractError, FormatError
from utils.logger import setup_logger

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_FORMAT = 2
EXIT_USAGE = 64

LLM_STAGE_CHOICES = {"pretrain": ["llm-pretrain"], "cpt": ["llm-cpt"], "sft": ["llm-sft"]}


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of 2."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def common_flags() -> argparse.ArgumentParser:
    common = UsageParser(add_help=False)
    common.add_argument("--config", help="JSON run config; defaults apply when omitted")
    common.add_argument("--out", help="output directory (default: $HMLLM_RUNS_DIR/run)")
    common.add_argument("--seed", type=int, help="run seed; replaces model, stage and data seeds")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for eval, ablate and sweep")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, applied after --config (repeatable)")
    return common


def build_parser() -> UsageParser:
    common = common_flags()
    parser = UsageParser(prog="hybrid-mllm", description=__doc__)
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    commands.add_parser("gen-data", parents=[common], help="write train/eval corpora and the prompt set")

    tok = commands.add_parser("train-tokenizer", parents=[common], help="train the hybrid tokenizer")
    tok.add_argument("--proxy", action="store_true", help="train the pixel-space proxy quantizer instead")
    tok.add_argument("--steps", type=int)
    tok.add_argument("--resume", action="store_true")

    llm = commands.add_parser("train-llm", parents=[common], help="train the unified decoder")
    llm.add_argument("--stage", choices=["pretrain", "cpt", "sft", "all"], default="all")
    llm.add_argument("--variant", choices=VARIANT_KINDS, default="hybrid")
    llm.add_argument("--base", help="run directory holding prerequisite checkpoints")
    llm.add_argument("--steps", type=int)
    llm.add_argument("--resume", action="store_true")

    dec = commands.add_parser("train-decoder", parents=[common], help="train the pixel decoder")
    dec.add_argument("--stage", choices=["1", "2", "all"], default="all")
    dec.add_argument("--base", help="run directory holding prerequisite checkpoints")
    dec.add_argument("--steps", type=int)
    dec.add_argument("--resume", action="store_true")

    gen = commands.add_parser("generate", parents=[common], help="generate an image from a prompt")
    gen.add_argument("--prompt", help="prompt text; read from stdin when omitted")
    gen.add_argument("--ckpt", help="run directory with trained checkpoints (default: --out)")
    gen.add_argument("--base", help="fallback run directory for the pixel decoder")
    gen.add_argument("--image-out", help="PPM path (default: <out>/generated.ppm)")

    und = commands.add_parser("understand", parents=[common], help="answer a question about an image")
    und.add_argument("--image", required=True, help="PPM image")
    und.add_argument("--question", required=True)
    und.add_argument("--ckpt", help="run directory with trained checkpoints (default: --out)")

    ev = commands.add_parser("eval", parents=[common], help="evaluate a trained run and write a report")
    ev.add_argument("--ckpt", help="run directory with trained checkpoints (default: --out)")
    ev.add_argument("--base", help="fallback run directory for the pixel decoder")
    ev.add_argument("--prompts", type=int, default=50, help="prompts per category")
    ev.add_argument("--limit", type=int, help="cap on understanding questions")

    ab = commands.add_parser("ablate", parents=[common], help="train and compare ablation variants")
    ab.add_argument("--comparison", choices=list(COMPARISONS) + ["all"], default="all")
    ab.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ab.add_argument("--prompts", type=int, default=50, help="prompts per category")

    sw = commands.add_parser("sweep", parents=[common], help="decoder-size scaling sweep")
    sw.add_argument("--sizes", nargs="+", choices=sorted(DECODER_PRESETS), default=["S", "M", "L"])
    sw.add_argument("--prompts", type=int, default=50, help="prompts per category")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"data.seed={args.seed}")
    config = load_run_config(args.config, overrides)
    return with_seed(config, args.seed) if args.seed is not None else config


def out_dir(args: argparse.Namespace) -> Path:
    return Path(args.out) if args.out else runs_dir() / "run"


def checkpoint_dir(args: argparse.Namespace) -> Path:
    return Path(args.ckpt) if args.ckpt else out_dir(args)


def optional_path(value: Optional[str]) -> Optional[Path]:
    return Path(value) if value else None


def cmd_gen_data(args, config: RunConfig) -> int:
    target = out_dir(args) / "data"
    train, held_out = build_splits(config.data.seed, config.data.train_size, config.data.eval_size,
                                   config.data.source_resolution, config.data.source_sizes)
    write_corpus(train, target)
    write_corpus(held_out, target)
    write_prompt_set(build_prompt_set(config.data.seed), target / "prompts.txt")
    print(f"wrote {len(train)} train and {len(held_out)} eval scenes to {target}")
    return EXIT_OK


def _run_stages(args, config: RunConfig, stages: List[str], base: Optional[Path] = None, variant=None) -> int:
    coordinator = StageCoordinator(config, out_dir(args), base, variant)
    for stage in stages:
        summary = coordinator.run_stage(stage, steps=args.steps, resume=args.resume)
        print(f"{stage}: {summary['checkpoint']}")
    return EXIT_OK


def cmd_train_tokenizer(args, config: RunConfig) -> int:
    return _run_stages(args, config, ["proxy-quantizer" if args.proxy else "tokenizer"])


def cmd_train_llm(args, config: RunConfig) -> int:
    config, variant = build_variant(args.variant, config)
    if args.stage == "all":
        stages = ["llm-pretrain"] + (["llm-cpt"] if config.run_cpt else []) + ["llm-sft"]
    else:
        stages = LLM_STAGE_CHOICES[args.stage]
    return _run_stages(args, config, stages, optional_path(args.base), variant)


def cmd_train_decoder(args, config: RunConfig) -> int:
    stages = {"1": ["decoder-1"], "2": ["decoder-2"], "all": ["decoder-1", "decoder-2"]}[args.stage]
    return _run_stages(args, config, stages, optional_path(args.base))


def cmd_generate(args, config: RunConfig) -> int:
    prompt = args.prompt if args.prompt is not None else sys.stdin.readline()
    prompt = prompt.strip()
    if not prompt:
        raise ContractError("empty prompt")
    bundle = ModelBundle.load(checkpoint_dir(args), sampler=config.sampler, base_dir=optional_path(args.base))
    image = bundle.generate(prompt, seed=config.seed)
    path = write_ppm(Path(args.image_out) if args.image_out else out_dir(args) / "generated.ppm", image)
    detected = detect_objects(image)
    try:
        verdict = "satisfied" if parse_caption(prompt).is_satisfied_by(detected) else "violated"
    except CaptionParseError:
        verdict = "unconstrained"
    objects = ", ".join(f"{color} {shape}@{cell}" for cell, shape, color in detected.canonical()) or "none"
    print(f"image: {path}")
    print(f"detected: {objects}")
    print(f"verdict: {verdict}")
    return EXIT_OK


def cmd_understand(args, config: RunConfig) -> int:
    image = read_ppm(args.image)
    bundle = ModelBundle.load(checkpoint_dir(args), require_decoder=False)
    print(bundle.answer(image, args.question))
    return EXIT_OK


def cmd_eval(args, config: RunConfig) -> int:
    run_dir = checkpoint_dir(args)
    coordinator = StageCoordinator(config, run_dir, optional_path(args.base))
    _, held_out = coordinator.corpora()
    bundle = ModelBundle.load(run_dir, sampler=config.sampler, base_dir=optional_path(args.base))
    settings = EvalSettings(seed=config.seed, prompts_per_category=args.prompts,
                            understanding_limit=args.limit, jobs=args.jobs)
    results, images = evaluate_bundle(bundle, held_out, settings)
    report_dir = out_dir(args) / "eval"
    emit_report(results, report_dir, generations=images)
    for family, value in headline(results).items():
        print(f"{family}: {value if value is None else round(value, 4)}")
    return EXIT_OK


def cmd_ablate(args, config: RunConfig) -> int:
    comparisons = list(COMPARISONS) if args.comparison == "all" else [args.comparison]
    settings = EvalSettings(prompts_per_category=args.prompts)
    verdict = run_ablation(config, out_dir(args) / "ablation", comparisons, args.seeds, args.jobs, settings)
    print(verdict.model_dump_json(indent=2))
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    target = out_dir(args) / "sweep"
    rows = scaling_sweep(config, args.sizes, target, jobs=args.jobs,
                         settings=EvalSettings(seed=config.seed, prompts_per_category=args.prompts))
    trend = sweep_trend(rows)
    emit_report({"scaling": rows, "trend": trend}, target, sweeps={"scaling": rows})
    print(f"monotone: {trend['monotone']} ({trend['wins']} of {len(trend['families'])} families)")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "gen-data": cmd_gen_data,
    "train-tokenizer": cmd_train_tokenizer,
    "train-llm": cmd_train_llm,
    "train-decoder": cmd_train_decoder,
    "generate": cmd_generate,
    "understand": cmd_understand,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on contract errors, 2 on IO/format errors, 64 on usage."""
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        write_effective_config(config, out_dir(args), extra={"command": args.command, "seed": config.seed})
        return COMMANDS[args.command](args, config)
    except ContractError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (FormatError, OSError) as exc:
        logger.error(f"{args.command} failed on IO: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
