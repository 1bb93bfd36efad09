"""Shared fixtures: repository root on sys.path, a tiny run config and a small corpus."""

import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

os.environ.setdefault("HMLLM_PROGRESS", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

from data.corpus import build_splits  # noqa: E402
from utils.config import load_run_config  # noqa: E402

TINY_OVERRIDES = [
    "progress=false",
    "data.train_size=40",
    "data.eval_size=12",
    "data.source_resolution=48",
    'vit={"image_size": 48, "patch_size": 4, "d_vit": 16, "depth": 1, "heads": 2}',
    'small_decoder={"d_model": 32, "depth": 1, "heads": 2, "max_seq_len": 160, "mlp_ratio": 2}',
    'llm={"d_model": 32, "depth": 1, "heads": 2, "max_seq_len": 160, "mlp_ratio": 2}',
    'dit={"resolution": 32, "patch_size": 8, "d": 16, "depth": 2, "heads": 2, "mlp_ratio": 2, "sample_steps": 2}',
    "stage2_resolution=48",
    "stages.tokenizer.steps=2",
    "stages.tokenizer.batch_size=2",
    "stages.proxy-quantizer.steps=2",
    "stages.proxy-quantizer.batch_size=4",
    "stages.llm-pretrain.steps=2",
    "stages.llm-pretrain.batch_size=2",
    "stages.llm-cpt.steps=1",
    "stages.llm-cpt.batch_size=2",
    "stages.llm-sft.steps=2",
    "stages.llm-sft.batch_size=2",
    "stages.decoder-1.steps=2",
    "stages.decoder-1.batch_size=2",
    "stages.decoder-2.steps=1",
    "stages.decoder-2.batch_size=2",
]


@pytest.fixture(scope="session")
def tiny_overrides():
    return list(TINY_OVERRIDES)


@pytest.fixture
def tiny_config():
    return load_run_config(None, TINY_OVERRIDES)


@pytest.fixture(scope="session")
def small_corpora():
    return build_splits(seed=3, train_size=60, eval_size=20, resolution=48)
