"""Hybrid image tokenizer: shared ViT, STC, continuous and FSQ discrete adapters."""

from .adapters import ContinuousAdapter, DiscreteAdapter, DiscreteCodes, continuous_adapt, discrete_adapt
from .fsq import FSQ, code_to_index, fsq_bound, fsq_quantize, index_to_code
from .hybrid import ADAPTERS, HybridTokenizer
from .patch_quantizer import PatchQuantizer
from .stc import FeatureGrid, stc_inverse, stc_rearrange
from .vit import VisionEncoder, vit_encode

__all__ = [
    "ADAPTERS",
    "ContinuousAdapter",
    "DiscreteAdapter",
    "DiscreteCodes",
    "FSQ",
    "FeatureGrid",
    "HybridTokenizer",
    "PatchQuantizer",
    "VisionEncoder",
    "code_to_index",
    "continuous_adapt",
    "discrete_adapt",
    "fsq_bound",
    "fsq_quantize",
    "index_to_code",
    "stc_inverse",
    "stc_rearrange",
    "vit_encode",
]
