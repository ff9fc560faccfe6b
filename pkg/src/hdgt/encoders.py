"""Node and edge initialisation: agent 1D-CNN, map PointNet, view-shift unit."""
from __future__ import annotations


import numpy as np

from .autodiff import ops
from .autodiff.params import ParamTable
from .autodiff.tensor import Tensor, as_tensor
from .batch import N_KINDS, N_LIGHTS, N_SUBTYPES, agent_channels, node_keys, normalize_agent_inputs  # noqa: F401
from .config import ModelConfig
from .nn import add_layer_norm, add_linear, add_mlp, apply_layer_norm, apply_linear, apply_mlp

KERNEL = 3
BLOCKS_PER_STAGE = 2


def _stage_widths(h: int) -> list[int]:
    return [max(h // 4, 1), max(h // 2, 1), h]


def _add_conv(p: ParamTable, name: str, cin: int, cout: int, k: int) -> None:
    p.weight(f"{name}.w", k * cin, cout, shape=(k, cin, cout))
    p.weight(f"{name}.b", k * cin, cout, shape=(cout,))


def _conv(p: ParamTable, name: str, x: Tensor, stride: int = 1) -> Tensor:
    w = p[f"{name}.w"]
    return ops.conv1d(x, w, p[f"{name}.b"], stride=stride, padding=w.shape[0] // 2)


def init_encoder_params(p: ParamTable, cfg: ModelConfig) -> None:
    h = cfg.hidden
    widths = _stage_widths(h)
    _add_conv(p, "enc.agent.stem", agent_channels(cfg), widths[0], KERNEL)
    add_layer_norm(p, "enc.agent.stem.ln", widths[0])
    cin = widths[0]
    for s, w in enumerate(widths):
        for b in range(BLOCKS_PER_STAGE):
            name = f"enc.agent.s{s}.b{b}"
            _add_conv(p, f"{name}.c1", cin, w, KERNEL)
            add_layer_norm(p, f"{name}.ln1", w)
            _add_conv(p, f"{name}.c2", w, w, KERNEL)
            add_layer_norm(p, f"{name}.ln2", w)
            if cin != w or (s > 0 and b == 0):
                _add_conv(p, f"{name}.skip", cin, w, 1)
            cin = w

    half = h // 2
    cin = 2
    for layer in range(cfg.pointnet_layers):
        add_linear(p, f"enc.map.pn{layer}", cin, half)
        cin = 2 * half
    e = cfg.embed_dim
    p.weight("enc.map.kind", N_KINDS, e, shape=(N_KINDS, e))
    p.weight("enc.map.subtype", N_KINDS * N_SUBTYPES, e, shape=(N_KINDS * N_SUBTYPES, e))
    p.weight("enc.map.light", N_LIGHTS, e, shape=(N_LIGHTS, e))
    add_linear(p, "enc.map.out", 2 * half + 3 * e, h)

    for key in node_keys(cfg):
        add_mlp(p, f"enc.viewshift.{key}", [h + 4, h, h])


def encode_agent_node(p: ParamTable, x: Tensor, cfg: ModelConfig) -> Tensor:
    """(A, L, C) frame-normalised sequences -> (A, h) via a residual 1D-CNN."""
    eps = cfg.ln_eps
    y = ops.relu(apply_layer_norm(p, "enc.agent.stem.ln", _conv(p, "enc.agent.stem", x), eps))
    for s in range(3):
        for b in range(BLOCKS_PER_STAGE):
            name = f"enc.agent.s{s}.b{b}"
            stride = 2 if (s > 0 and b == 0) else 1
            z = ops.relu(apply_layer_norm(p, f"{name}.ln1", _conv(p, f"{name}.c1", y, stride), eps))
            z = apply_layer_norm(p, f"{name}.ln2", _conv(p, f"{name}.c2", z), eps)
            skip = _conv(p, f"{name}.skip", y, stride) if f"{name}.skip.w" in p else y
            y = ops.relu(ops.add(z, skip))
    return ops.mean_pool_over_time(y, axis=1)


def encode_map_node(p: ParamTable, points: Tensor, kind, subtype, light, cfg: ModelConfig) -> Tensor:
    """(M, P, 2) local-frame point sets -> (M, h).

    Padding rows must repeat a real point of the same set: max-pooling is
    unaffected by duplicates, so no mask is needed.
    """
    x = points
    m, n_pts = points.shape[0], points.shape[1]
    for layer in range(cfg.pointnet_layers):
        z = ops.relu(apply_linear(p, f"enc.map.pn{layer}", x))
        pooled = ops.max_pool_over_set(z, axis=1)
        spread = ops.add(ops.reshape(pooled, (m, 1, z.shape[2])),
                         as_tensor(np.zeros((m, n_pts, z.shape[2]), dtype=z.dtype)))
        x = ops.concat([z, spread], axis=-1)
    g = ops.max_pool_over_set(x, axis=1)
    emb = [ops.take(p["enc.map.kind"], kind), ops.take(p["enc.map.subtype"], subtype),
           ops.take(p["enc.map.light"], light)]
    return apply_linear(p, "enc.map.out", ops.concat([g] + emb, axis=-1))


def scale_dpose(dpose: np.ndarray, coord_scale: float) -> np.ndarray:
    out = np.array(dpose, dtype=np.float64, copy=True)
    out[:, :2] *= coord_scale
    return out


def view_shift(p: ParamTable, u_feat: Tensor, dpose: Tensor, src_key: str) -> Tensor:
    """Edge feature from a source feature and the source-to-target pose change."""
    return apply_mlp(p, f"enc.viewshift.{src_key}", ops.concat([u_feat, dpose], axis=-1), 2)
