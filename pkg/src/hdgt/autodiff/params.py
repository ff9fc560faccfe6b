"""Named, ordered parameter tables with deterministic initialisation."""
from __future__ import annotations

import math
import zlib

import numpy as np

from .tensor import Tensor, default_dtype


def _rng_for(seed: int, name: str) -> np.random.Generator:
    # Keyed by name so a parameter's init does not depend on creation order.
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class ParamTable:
    """Ordered map ``name -> Tensor`` of trainable leaves."""

    def __init__(self, seed: int = 0, dtype=None):
        self.seed = seed
        self.dtype = dtype or default_dtype()
        self._params: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def values(self):
        return self._params.values()

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name, dtype=self.dtype)
        self._params[name] = t
        return t

    def weight(self, name: str, fan_in: int, fan_out: int, shape=None) -> Tensor:
        """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
        shape = shape or (fan_in, fan_out)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return self._add(name, _rng_for(self.seed, name).uniform(-bound, bound, shape))

    def uniform(self, name: str, bound: float, shape) -> Tensor:
        return self._add(name, _rng_for(self.seed, name).uniform(-bound, bound, shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._add(name, np.ones(shape))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = [k for k in self._params if k not in state]
        unexpected = [k for k in state if k not in self._params]
        if strict and (missing or unexpected):
            raise KeyError(f"checkpoint mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, t in self._params.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != t.shape:
                    raise ValueError(f"shape mismatch for {k}: {arr.shape} != {t.shape}")
                t.data = arr.astype(self.dtype).copy()

    def astype(self, dtype) -> "ParamTable":
        out = ParamTable(self.seed, dtype)
        for k, t in self._params.items():
            out._add(k, t.data)
        return out

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))
