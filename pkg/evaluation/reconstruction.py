"""Tokenizer-to-pixel reconstruction quality."""

from typing import List, Optional

import numpy as np
from pydantic import BaseModel

from pixel.trainer import render_codes
from utils.errors import DimensionError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

PSNR_CAP = 60.0


class ReconstructionStats(BaseModel):
    mean: float
    median: float
    count: int
    values: List[float]


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    """PSNR in dB for images in [0, 1]; identical images report `cap`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"PSNR over different shapes {a.shape} and {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return cap
    return float(min(cap, 10.0 * np.log10(1.0 / mse)))


def summarize(values: List[float]) -> ReconstructionStats:
    if not values:
        return ReconstructionStats(mean=float("nan"), median=float("nan"), count=0, values=[])
    return ReconstructionStats(mean=float(np.mean(values)), median=float(np.median(values)),
                               count=len(values), values=[float(v) for v in values])


def reconstruction_probe(tokenizer, decoder, source_images: np.ndarray, targets: np.ndarray,
                         steps: int = 50, seed: int = 0, mismatched: bool = False,
                         batch_size: int = 16) -> ReconstructionStats:
    """Encode sources to codes, decode through the pixel decoder, and compare against targets.

    With `mismatched`, each image is decoded from the next image's codes.
    """
    codes = np.concatenate([tokenizer.encode_codes(source_images[i:i + batch_size])
                            for i in range(0, len(source_images), batch_size)]) if len(source_images) else \
        np.zeros((0, tokenizer.tokens_per_image), dtype=np.int64)
    if mismatched:
        codes = np.roll(codes, 1, axis=0)
    values: List[float] = []
    for start in range(0, len(codes), batch_size):
        images = render_codes(decoder, tokenizer, codes[start:start + batch_size], steps, seed=seed + start)
        values.extend(psnr(img, tgt) for img, tgt in zip(images, targets[start:start + batch_size]))
    stats = summarize(values)
    log_component_call(logger, "ReconstructionProbe", "Measured PSNR",
                       {"mean": round(stats.mean, 3), "median": round(stats.median, 3), "count": stats.count,
                        "mismatched": mismatched})
    return stats


def fidelity_psnr(images: np.ndarray, references: np.ndarray, limit: Optional[int] = None) -> ReconstructionStats:
    """PSNR of generated images against reference renders of their prompts."""
    n = len(images) if limit is None else min(limit, len(images))
    return summarize([psnr(images[i], references[i]) for i in range(n)])
