"""Joint vocabulary: text characters, image codes and five specials."""

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from data.text import V_TEXT
from utils.errors import ContractError

SPECIALS = ("PAD", "BOS", "EOS", "BOI", "EOI")


class Vocabulary(BaseModel):
    """Ids are laid out as [text | image codes | PAD BOS EOS BOI EOI]."""

    model_config = ConfigDict(frozen=True)

    v_text: int = V_TEXT
    k: int = Field(gt=0)

    @property
    def image_offset(self) -> int:
        return self.v_text

    @property
    def pad(self) -> int:
        return self.v_text + self.k

    @property
    def bos(self) -> int:
        return self.pad + 1

    @property
    def eos(self) -> int:
        return self.pad + 2

    @property
    def boi(self) -> int:
        return self.pad + 3

    @property
    def eoi(self) -> int:
        return self.pad + 4

    @property
    def size(self) -> int:
        return self.v_text + self.k + len(SPECIALS)

    @property
    def image_range(self) -> Tuple[int, int]:
        return self.v_text, self.v_text + self.k

    def is_text(self, token: int) -> bool:
        return 0 <= token < self.v_text

    def is_image(self, token: int) -> bool:
        lo, hi = self.image_range
        return lo <= token < hi

    def image_ids(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if np.any(codes < 0) or np.any(codes >= self.k):
            raise ContractError(f"image code outside [0, {self.k})")
        return codes + self.image_offset

    def codes_of(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        lo, hi = self.image_range
        if np.any(ids < lo) or np.any(ids >= hi):
            raise ContractError(f"token id outside the image range [{lo}, {hi})")
        return ids - self.image_offset

    def image_logit_mask(self) -> np.ndarray:
        """True where generation may emit a token inside an image span."""
        mask = np.zeros(self.size, dtype=bool)
        lo, hi = self.image_range
        mask[lo:hi] = True
        return mask

    def answer_logit_mask(self) -> np.ndarray:
        """Text ids plus EOS."""
        mask = np.zeros(self.size, dtype=bool)
        mask[:self.v_text] = True
        mask[self.eos] = True
        return mask
