"""Counter-based random streams for dropout."""

from collections import defaultdict

import numpy as np


class DropoutStream:
    """Hands out generators keyed by (seed, layer index, step, call).

    The same layer called twice within one step gets two different
    generators; the sequence restarts when the step changes.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.step = 0
        self._calls: defaultdict[int, int] = defaultdict(int)
        self._layers = 0

    def register_layer(self) -> int:
        index = self._layers
        self._layers += 1
        return index

    def set_step(self, step: int) -> None:
        self.step = step
        self._calls.clear()

    def generator(self, layer_index: int) -> np.random.Generator:
        call = self._calls[layer_index]
        self._calls[layer_index] = call + 1
        return np.random.default_rng([self.seed, layer_index, self.step, call])
