"""Unified decoder over the joint text and image-token vocabulary."""

from .decoder import TransformerDecoder, decoder_forward
from .generation import Sampler, answer_question, answer_text, generate_image_tokens
from .loss import combine_losses, unified_loss
from .sequence import (
    IMAGE,
    TEXT,
    MixedSequence,
    build_caption_sequence,
    build_generation_sequence,
    build_text_sequence,
    build_understanding_sequence,
)
from .vocab import Vocabulary

__all__ = [
    "IMAGE",
    "TEXT",
    "MixedSequence",
    "Sampler",
    "TransformerDecoder",
    "Vocabulary",
    "answer_question",
    "answer_text",
    "build_caption_sequence",
    "build_generation_sequence",
    "build_text_sequence",
    "build_understanding_sequence",
    "combine_losses",
    "decoder_forward",
    "generate_image_tokens",
    "unified_loss",
]
