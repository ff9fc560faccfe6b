"""Stacked heterogeneous graph-transformer layers.

Within a layer every node and edge update reads the layer k-1 state only, so
the node path and the edge path can run in either order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.params import ParamTable
from .autodiff.tensor import Tensor, as_tensor
from .batch import node_keys, relation_keys, relations_of
from .config import ModelConfig
from .nn import add_layer_norm, add_linear, add_mlp, apply_layer_norm, apply_linear, apply_mlp


@dataclass
class GraphState:
    nodes: Tensor  # (N, h)
    edges: Tensor  # (E, h)
    layer: int = 0


@dataclass
class Topology:
    """Index arrays the layers need; built from a Batch or by hand in tests."""
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    node_groups: dict[str, np.ndarray]
    node_local: np.ndarray
    edge_groups: dict[str, np.ndarray]
    edge_dst_group: dict[str, str]
    dpose: np.ndarray  # (E, 4), translation already scaled

    @classmethod
    def from_batch(cls, batch, coord_scale: float) -> "Topology":
        from .encoders import scale_dpose
        return cls(batch.n_nodes, batch.src, batch.dst, batch.node_groups, batch.node_local,
                   batch.edge_groups, batch.edge_dst_group, scale_dpose(batch.dpose, coord_scale))


def _fusion_layers(cfg: ModelConfig) -> int:
    return 2 if cfg.fusion_hidden else 1


def init_layer_params(p: ParamTable, cfg: ModelConfig, k: int, with_edges: bool = True) -> None:
    """Parameters of layer ``k``; the final layer's edge update has no reader
    downstream, so callers skip it with ``with_edges=False``."""
    h = cfg.hidden
    for r in relation_keys(cfg):
        base = f"layer{k}.attn.{r}"
        if cfg.aggregation == "transformer":
            add_layer_norm(p, f"{base}.ln_kv", h)
            for w in ("wq", "wk", "wv", "wo"):
                add_linear(p, f"{base}.{w}", h, h, bias=False)
        else:
            add_layer_norm(p, f"{base}.ln_kv", h)
            add_mlp(p, f"{base}.msg", [h, h, h])
        if not with_edges:
            continue
        e = f"layer{k}.edge.{r}"
        add_layer_norm(p, f"{e}.ln_u", h)
        add_layer_norm(p, f"{e}.ln_e", h)
        add_mlp(p, f"{e}.mlp", [2 * h + 4, h, h])
    for t in node_keys(cfg):
        n_r = len(relations_of(t, cfg))
        fuse = f"layer{k}.fuse.{t}"
        if cfg.aggregation == "transformer":
            add_layer_norm(p, f"{fuse}.ln_q", h)
        add_mlp(p, f"{fuse}.mlp", [n_r * h, h, h] if cfg.fusion_hidden else [n_r * h, h])
        ffn = f"layer{k}.ffn.{t}"
        add_layer_norm(p, f"{ffn}.ln", h)
        add_mlp(p, f"{ffn}.mlp", [h, cfg.ffn_mult * h, h])


def relation_message(p: ParamTable, cfg: ModelConfig, k: int, r: str, q_nodes: Tensor,
                     edges: Tensor, local_dst: np.ndarray, n_dst: int,
                     return_weights: bool = False):
    """Per-relation aggregate for every node of the destination group: (n_dst, h)."""
    base = f"layer{k}.attn.{r}"
    kv = apply_layer_norm(p, f"{base}.ln_kv", edges, cfg.ln_eps)
    if cfg.aggregation == "gcn_like":
        msg = apply_mlp(p, f"{base}.msg", kv, 2)
        out = ops.segment_sum(msg, local_dst, n_dst)
        return (out, None) if return_weights else out
    q = ops.take(apply_linear(p, f"{base}.wq", q_nodes), local_dst)
    att = ops.segment_attention(q, apply_linear(p, f"{base}.wk", kv), apply_linear(p, f"{base}.wv", kv),
                                local_dst, n_dst, cfg.n_heads, return_weights=return_weights)
    if return_weights:
        att, w = att
        return apply_linear(p, f"{base}.wo", att), w
    return apply_linear(p, f"{base}.wo", att)


def typed_node_aggregate(p: ParamTable, cfg: ModelConfig, k: int, topo: Topology, state: GraphState,
                         group: str, attn_weights: dict | None = None) -> Tensor:
    """Fused aggregate for the nodes of one group: MLP over the relation concat.

    Relations with no edges in the batch contribute zero vectors so the concat
    width stays fixed.
    """
    rows = topo.node_groups[group]
    n_g = len(rows)
    v = ops.take(state.nodes, rows)
    q_nodes = (apply_layer_norm(p, f"layer{k}.fuse.{group}.ln_q", v, cfg.ln_eps)
               if cfg.aggregation == "transformer" else None)
    parts = []
    for r in relations_of(group, cfg):
        erows = topo.edge_groups.get(r)
        if erows is None or len(erows) == 0:
            parts.append(as_tensor(np.zeros((n_g, cfg.hidden), dtype=state.nodes.dtype)))
            continue
        if topo.edge_dst_group[r] != group:
            raise AssertionError(f"relation {r} does not end in group {group}")
        local = topo.node_local[topo.dst[erows]]
        out = relation_message(p, cfg, k, r, q_nodes, ops.take(state.edges, erows), local, n_g,
                               return_weights=attn_weights is not None)
        if attn_weights is not None:
            out, attn_weights[r] = out
        parts.append(out)
    return apply_mlp(p, f"layer{k}.fuse.{group}.mlp", ops.concat(parts, axis=-1), _fusion_layers(cfg))


def node_update(p: ParamTable, cfg: ModelConfig, k: int, group: str, fused: Tensor, v_prev: Tensor) -> Tensor:
    """Residual add of the fused aggregate, then a pre-norm residual FFN."""
    v_mid = ops.add(v_prev, fused)
    ffn = f"layer{k}.ffn.{group}"
    y = apply_mlp(p, f"{ffn}.mlp", apply_layer_norm(p, f"{ffn}.ln", v_mid, cfg.ln_eps), 2)
    return ops.add(v_mid, y)


def edge_update(p: ParamTable, cfg: ModelConfig, k: int, r: str, e_prev: Tensor, u_feat: Tensor,
                dpose: Tensor) -> Tensor:
    e = f"layer{k}.edge.{r}"
    x = ops.concat([apply_layer_norm(p, f"{e}.ln_u", u_feat, cfg.ln_eps), dpose,
                    apply_layer_norm(p, f"{e}.ln_e", e_prev, cfg.ln_eps)], axis=-1)
    return ops.add(e_prev, apply_mlp(p, f"{e}.mlp", x, 2))


def layer_forward(p: ParamTable, cfg: ModelConfig, k: int, topo: Topology, state: GraphState,
                  update_edges: bool = True, attn_weights: dict | None = None) -> GraphState:
    groups = [g for g in node_keys(cfg) if g in topo.node_groups and len(topo.node_groups[g])]
    new_parts, new_rows = [], []
    for g in groups:
        fused = typed_node_aggregate(p, cfg, k, topo, state, g, attn_weights)
        new_parts.append(node_update(p, cfg, k, g, fused, ops.take(state.nodes, topo.node_groups[g])))
        new_rows.append(topo.node_groups[g])
    nodes = ops.scatter_rows(new_parts, new_rows, topo.n_nodes)

    edges = state.edges
    if update_edges and len(topo.src):
        e_parts, e_rows = [], []
        dpose = as_tensor(topo.dpose.astype(state.nodes.dtype))
        for r, erows in topo.edge_groups.items():
            if len(erows) == 0:
                continue
            e_parts.append(edge_update(p, cfg, k, r, ops.take(state.edges, erows),
                                       ops.take(state.nodes, topo.src[erows]), ops.take(dpose, erows)))
            e_rows.append(erows)
        edges = ops.scatter_rows(e_parts, e_rows, len(topo.src))
    return GraphState(nodes, edges, state.layer + 1)


def forward_stack(p: ParamTable, cfg: ModelConfig, topo: Topology, state: GraphState,
                  update_final_edges: bool = False) -> GraphState:
    """Apply ``cfg.n_layers`` layers; the last edge update is skipped unless asked
    for since nothing downstream reads it."""
    for k in range(cfg.n_layers):
        last = k == cfg.n_layers - 1
        state = layer_forward(p, cfg, k, topo, state, update_edges=update_final_edges or not last)
    return state
