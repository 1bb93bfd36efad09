"""Pcg32 - PCG-XSH-RR random number generator with explicit streams."""

import math
from typing import List, MutableSequence, Sequence, TypeVar

import numpy as np

from utils.errors import ContractError

T = TypeVar("T")

MASK64 = (1 << 64) - 1
MASK32 = (1 << 32) - 1
MULTIPLIER = 6364136223846793005


class Pcg32:
    """32-bit output PCG generator; (seed, stream) fully determines the sequence."""

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = seed
        self.stream = stream
        self.state = 0
        self.inc = ((stream << 1) | 1) & MASK64
        self.next_u32()
        self.state = (self.state + seed) & MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * MULTIPLIER + self.inc) & MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & MASK32

    def next_u64(self) -> int:
        return (self.next_u32() << 32) | self.next_u32()

    def uniform(self) -> float:
        """Float in [0, 1) with 32 bits of resolution."""
        return self.next_u32() / 4294967296.0

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ContractError(f"randrange bound must be positive, got {n}")
        threshold = ((1 << 32) - n) % n
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % n

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def choice(self, items: Sequence[T]) -> T:
        if not items:
            raise ContractError("choice from an empty sequence")
        return items[self.randrange(len(items))]

    def categorical(self, weights: Sequence[float]) -> int:
        """Inverse-CDF draw on one uniform."""
        u = self.uniform()
        total = 0.0
        for i, w in enumerate(weights):
            total += w
            if u < total:
                return i
        # u landed in the rounding slack above the last cumulative sum
        for i in range(len(weights) - 1, -1, -1):
            if weights[i] > 0:
                return i
        raise ContractError("categorical weights are all zero")

    def shuffle(self, items: MutableSequence[T]) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: Sequence[T], k: int) -> List[T]:
        """k distinct items in draw order (partial Fisher-Yates)."""
        pool = list(items)
        if k > len(pool):
            raise ContractError(f"cannot sample {k} items from {len(pool)}")
        for i in range(k):
            j = i + self.randrange(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def normal(self) -> float:
        """Standard normal via Box-Muller."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def numpy(self) -> np.random.Generator:
        """A numpy generator seeded from this stream, for bulk noise."""
        return np.random.default_rng(self.next_u64())

    def spawn(self, stream: int) -> "Pcg32":
        return Pcg32(self.next_u64(), stream)
