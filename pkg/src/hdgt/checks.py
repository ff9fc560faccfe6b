"""Finite-difference checks for every primitive op and for the whole model."""
from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import grad_check
from .autodiff.tensor import Tensor, precision
from .config import ModelConfig

TOLERANCE = 1e-5


def _leaf(rng, *shape, positive=False, offset=0.0):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x + offset, requires_grad=True)


def _away_from_zero(rng, *shape):
    # keeps relu / smooth-L1 / max kinks well outside the finite-difference step
    x = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.normal(size=out.shape))
    return ops.sum(ops.mul(out, w))


def op_cases(seed: int = 0):
    """(name, scalar function, leaves) triples covering each primitive."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(name, fn, *leaves):
        cases.append((name, lambda: _weighted(fn(*leaves), np.random.default_rng(len(name))), list(leaves)))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    case("add", ops.add, a, b)
    case("sub", ops.sub, _leaf(rng, 3, 4), _leaf(rng, 1, 4))
    case("mul", ops.mul, _leaf(rng, 3, 4), _leaf(rng, 3, 1))
    case("relu", ops.relu, _away_from_zero(rng, 4, 5))
    case("exp", ops.exp, _leaf(rng, 3, 3))
    case("log", ops.log, _leaf(rng, 3, 3, positive=True))
    case("smooth_l1", ops.smooth_l1, Tensor(np.array([-2.5, -0.7, -0.3, 0.4, 0.8, 1.9]), requires_grad=True),
         Tensor(rng.normal(size=6) * 0.01, requires_grad=True))
    case("reshape", lambda x: ops.reshape(x, (6, 2)), _leaf(rng, 3, 4))
    case("transpose", lambda x: ops.transpose(x, (2, 0, 1)), _leaf(rng, 2, 3, 4))
    case("concat", lambda x, y: ops.concat([x, y], axis=1), _leaf(rng, 3, 2), _leaf(rng, 3, 4))
    case("index", lambda x: ops.index(x, (np.array([0, 2, 0]), np.array([1, 1, 1]))), _leaf(rng, 3, 4))
    case("take", lambda x: ops.take(x, [2, 0, 2, 1]), _leaf(rng, 3, 4))
    case("scatter_rows", lambda x, y: ops.scatter_rows([x, y], [np.array([0, 3]), np.array([1, 2, 4])], 5),
         _leaf(rng, 2, 3), _leaf(rng, 3, 3))
    case("sum", lambda x: ops.sum(x, axis=1), _leaf(rng, 3, 4))
    case("mean", lambda x: ops.mean(x, axis=0), _leaf(rng, 3, 4))
    case("max_pool_over_set", lambda x: ops.max_pool_over_set(x, axis=1),
         Tensor(rng.permutation(24).reshape(2, 4, 3) * 0.1, requires_grad=True))
    case("mean_pool_over_time", lambda x: ops.mean_pool_over_time(x, axis=1), _leaf(rng, 2, 5, 3))
    case("matmul", ops.matmul, _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5))
    case("linear", ops.linear, _leaf(rng, 5, 4), _leaf(rng, 4, 3), _leaf(rng, 3))
    case("softmax", lambda x: ops.softmax(x, axis=-1), _leaf(rng, 3, 5))
    case("log_softmax", lambda x: ops.log_softmax(x, axis=-1), _leaf(rng, 3, 5))
    case("layer_norm", ops.layer_norm, _leaf(rng, 4, 6), _leaf(rng, 6), _leaf(rng, 6))
    seg = np.array([0, 0, 2, 2, 2, 3])
    case("segment_sum", lambda x: ops.segment_sum(x, seg, 4), _leaf(rng, 6, 3))
    case("segment_softmax", lambda x: ops.segment_softmax(x, seg, 4), _leaf(rng, 6, 2))
    case("segment_attention", lambda q, k, v: ops.segment_attention(q, k, v, seg, 4, 2),
         _leaf(rng, 6, 4), _leaf(rng, 6, 4), _leaf(rng, 6, 4))
    wq, wk, wv, wo = (_leaf(rng, 4, 4) for _ in range(4))
    case("multi_head_attention",
         lambda x, y, q, k, v, o: ops.multi_head_attention(x, y, y, {"wq": q, "wk": k, "wv": v, "wo": o}, 2),
         _leaf(rng, 3, 4), _leaf(rng, 5, 4), wq, wk, wv, wo)
    case("conv1d", lambda x, w, c: ops.conv1d(x, w, c, stride=2, padding=1),
         _leaf(rng, 2, 7, 3), _leaf(rng, 3, 3, 4), _leaf(rng, 4))
    return cases


def check_ops(eps: float = 1e-4, seed: int = 0) -> dict[str, float]:
    with precision(np.float64):
        return {name: grad_check(f, leaves, eps=eps) for name, f, leaves in op_cases(seed)}


def gradcheck_scene():
    """A small straight-road scene whose graph has eight nodes."""
    from .scene.synthetic import GeneratorConfig, generate_synthetic
    return generate_synthetic(0, GeneratorConfig(template="straight", n_vehicles=1, n_pedestrians=0,
                                                 n_lanes=1, n_segments=1))


def check_model(cfg: ModelConfig | None = None, scene=None, eps: float = 1e-4, coords_per_tensor: int = 3,
                seed: int = 0) -> dict[str, float]:
    """Max relative error per parameter tensor of the full loss, sampled coordinates."""
    from .model import init_params, loss, make_batch
    cfg = cfg or ModelConfig(hidden=32, n_layers=2, n_modes=6)
    scene = scene or gradcheck_scene()
    with precision(np.float64):
        params = init_params(cfg)
        batch = make_batch([scene], cfg)

        def f():
            return loss(params, cfg, batch).total

        return {name: grad_check(f, [t], eps=eps, max_coords=coords_per_tensor, seed=seed)
                for name, t in params.items()}
