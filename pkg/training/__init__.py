"""Training pipeline: stage coordination, task mixtures, checkpoints, variants and sweeps."""

from training.bundle import ModelBundle, checkpoint_path, find_checkpoint
from training.checkpoint import (
    CheckpointManifest,
    build_manifest,
    load_checkpoint,
    restore_module,
    save_checkpoint,
)
from training.mixture import TASKS, MixSampler, mix_sample
from training.variants import VARIANT_KINDS, VariantSpec, build_variant, with_seed

__all__ = [
    "CheckpointManifest",
    "MixSampler",
    "ModelBundle",
    "TASKS",
    "VARIANT_KINDS",
    "VariantSpec",
    "build_manifest",
    "build_variant",
    "checkpoint_path",
    "find_checkpoint",
    "load_checkpoint",
    "mix_sample",
    "restore_module",
    "save_checkpoint",
    "with_seed",
]
