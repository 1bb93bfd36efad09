"""Task-mixture sampling for unified training."""

from collections import Counter
from typing import Dict, Tuple, Union

from data.rng import Pcg32
from utils.config import MixRatios

TASKS = ("understanding", "generation", "text")
MIX_STREAM = 5


class MixSampler:
    """Categorical draw over (understanding, generation, text) by inverse CDF on one uniform."""

    def __init__(self, ratios: Union[MixRatios, Tuple[float, float, float]], seed: int = 0,
                 stream: int = MIX_STREAM):
        self.ratios = ratios if isinstance(ratios, MixRatios) else MixRatios.from_tuple(ratios)
        self.rng = Pcg32(seed, stream)

    @property
    def weights(self) -> Tuple[float, float, float]:
        return self.ratios.as_tuple()

    def draw(self) -> str:
        return TASKS[self.rng.categorical(self.weights)]

    def counts(self, n: int) -> Dict[str, int]:
        tally = Counter(self.draw() for _ in range(n))
        return {task: tally.get(task, 0) for task in TASKS}


def mix_sample(sampler: MixSampler) -> str:
    return sampler.draw()
