"""Character-level text tokenizer over a fixed alphabet."""

import string
from typing import Iterable, List

import numpy as np

from utils.errors import ContractError, TokenizationError

ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits + " .,?!'-"
V_TEXT = len(ALPHABET)

_CHAR_TO_ID = {ch: i for i, ch in enumerate(ALPHABET)}


def text_tokenize(text: str) -> List[int]:
    ids = []
    for position, ch in enumerate(text):
        if ch not in _CHAR_TO_ID:
            raise TokenizationError(f"character {ch!r} at position {position} is outside the alphabet")
        ids.append(_CHAR_TO_ID[ch])
    return ids


def text_detokenize(ids: Iterable[int]) -> str:
    chars = []
    for i in ids:
        i = int(i)
        if not 0 <= i < V_TEXT:
            raise ContractError(f"text id {i} outside [0, {V_TEXT})")
        chars.append(ALPHABET[i])
    return "".join(chars)


def tokenize_array(text: str) -> np.ndarray:
    return np.asarray(text_tokenize(text), dtype=np.int64)
