"""Named parameter registry with the initialisation schemes used by the model."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import SeededRng, Tensor

RECURRENT_INIT = 0.08


class ParamStore:
    def __init__(self, rng: SeededRng, dtype=np.float64):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def recurrent(self, name: str, shape) -> Tensor:
        return self.add(name, self.rng.uniform(shape, -RECURRENT_INIT, RECURRENT_INIT, self.dtype))

    def projection(self, name: str, shape) -> Tensor:
        # weights are stored input-major, so fan-in is the leading axis
        return self.add(name, self.rng.normal(shape, 1.0 / math.sqrt(shape[0]), self.dtype))

    def normal(self, name: str, shape, std: float) -> Tensor:
        return self.add(name, self.rng.normal(shape, std, self.dtype))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.params.values())
