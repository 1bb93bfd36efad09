"""Unified next-token loss with per-modality weights."""

from typing import Dict, Optional, Tuple

import numpy as np

from core.ops import softmax_cross_entropy
from core.tensor import Tensor, add, scale
from llm.sequence import IMAGE, TEXT, MixedSequence
from utils.config import LossWeights
from utils.errors import DegenerateLossError


def combine_losses(text: Optional[Tensor], image: Optional[Tensor], weights: LossWeights) -> Tensor:
    """weights.text * text + weights.image * image, omitting missing terms."""
    terms = []
    if text is not None:
        terms.append(scale(text, weights.text))
    if image is not None:
        terms.append(scale(image, weights.image))
    if not terms:
        raise DegenerateLossError("neither a text nor an image target is masked in")
    return terms[0] if len(terms) == 1 else add(terms[0], terms[1])


def unified_loss_arrays(logits: Tensor, targets: np.ndarray, loss_mask: np.ndarray, modality: np.ndarray,
                        weights: Optional[LossWeights] = None) -> Tuple[Tensor, Dict[str, float]]:
    weights = weights or LossWeights()
    flat = logits.reshape(-1, logits.shape[-1])
    text_mask = loss_mask * (modality == TEXT)
    image_mask = loss_mask * (modality == IMAGE)
    text = softmax_cross_entropy(flat, targets, text_mask) if text_mask.sum() > 0 else None
    image = softmax_cross_entropy(flat, targets, image_mask) if image_mask.sum() > 0 else None
    total = combine_losses(text, image, weights)
    parts = {"loss": total.item()}
    if text is not None:
        parts["text"] = text.item()
    if image is not None:
        parts["image"] = image.item()
    return total, parts


def unified_loss(logits: Tensor, seq: MixedSequence, weights: Optional[LossWeights] = None) -> Tensor:
    """CE over text-tagged positions plus 0.5 x CE over image-tagged positions."""
    total, _ = unified_loss_arrays(logits, seq.targets, seq.loss_mask, seq.modality, weights)
    return total
