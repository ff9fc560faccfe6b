"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def grad_check(f: Callable[[], Tensor], params: Tensor | Sequence[Tensor], eps: float = 1e-4,
               coords: dict[int, np.ndarray] | None = None, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Max over checked coordinates of |a - n| / max(1, |a|, |n|).

    ``f`` recomputes a scalar from the current values of ``params`` (leaf
    tensors, ideally float64).  ``max_coords`` caps the number of coordinates
    sampled per tensor; by default every coordinate is checked.
    """
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.grad = None
        p.requires_grad = True
    out = f()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar function")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for i, p in enumerate(params):
            flat = p.data.reshape(-1)
            if coords is not None and i in coords:
                chosen = np.asarray(coords[i])
            elif max_coords is not None and flat.size > max_coords:
                chosen = rng.choice(flat.size, size=max_coords, replace=False)
            else:
                chosen = np.arange(flat.size)
            for c in chosen:
                orig = flat[c]
                flat[c] = orig + eps
                fp = float(f().data)
                flat[c] = orig - eps
                fm = float(f().data)
                flat[c] = orig
                numeric = (fp - fm) / (2 * eps)
                worst = max(worst, float(relative_error(analytic[i].reshape(-1)[c], numeric)))
    return worst
