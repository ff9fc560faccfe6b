"""End-to-end forward pass: encoders, graph-transformer stack, heads."""
from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.params import ParamTable
from .autodiff.tensor import as_tensor, default_dtype
from .batch import Batch, collate, featurize, node_key, scale_agent_inputs
from .config import ModelConfig
from .core import GraphState, Topology, forward_stack, init_layer_params
from .decoder import LossBreakdown, Prediction, init_head_params, mtp_loss, predict
from .encoders import encode_agent_node, encode_map_node, init_encoder_params, scale_dpose, view_shift
from .graph import NodeType
from .scene.preprocess import preprocess


def init_params(cfg: ModelConfig, dtype=None) -> ParamTable:
    p = ParamTable(seed=cfg.seed, dtype=dtype or default_dtype())
    init_encoder_params(p, cfg)
    for k in range(cfg.n_layers):
        init_layer_params(p, cfg, k, with_edges=k < cfg.n_layers - 1)
    init_head_params(p, cfg)
    return p


def make_batch(scenes, cfg: ModelConfig) -> Batch:
    """Preprocess, featurize and collate raw scenes."""
    return collate([featurize(preprocess(s), cfg) for s in scenes], cfg)


def initial_state(p: ParamTable, cfg: ModelConfig, batch: Batch) -> GraphState:
    dtype = p.dtype
    agent_x = as_tensor(scale_agent_inputs(batch.agent_inputs, cfg.coord_scale).astype(dtype))
    parts, rows = [encode_agent_node(p, agent_x, cfg)], [batch.agent_nodes]
    if len(batch.map_nodes):
        pts = as_tensor((batch.map_points * cfg.coord_scale).astype(dtype))
        parts.append(encode_map_node(p, pts, batch.map_kind, batch.map_subtype, batch.map_light, cfg))
        rows.append(batch.map_nodes)
    nodes = ops.scatter_rows(parts, rows, batch.n_nodes)

    if batch.n_edges == 0:
        return GraphState(nodes, as_tensor(np.zeros((0, cfg.hidden), dtype=dtype)))
    dpose0 = as_tensor(scale_dpose(batch.dpose_init, cfg.coord_scale).astype(dtype))
    if cfg.mode == "relative_edge":
        # sources re-encoded directly in the target frame
        src_feats, src_rows = [], []
        if len(batch.rel_agent_edges):
            x = as_tensor(scale_agent_inputs(batch.rel_agent_inputs, cfg.coord_scale).astype(dtype))
            src_feats.append(encode_agent_node(p, x, cfg))
            src_rows.append(batch.rel_agent_edges)
        if len(batch.rel_map_edges):
            pts = as_tensor((batch.rel_map_points * cfg.coord_scale).astype(dtype))
            src_feats.append(encode_map_node(p, pts, batch.rel_map_kind, batch.rel_map_subtype,
                                             batch.rel_map_light, cfg))
            src_rows.append(batch.rel_map_edges)
        u0 = ops.scatter_rows(src_feats, src_rows, batch.n_edges)
    else:
        u0 = ops.take(nodes, batch.src)
    parts, rows = [], []
    for key, erows in batch.viewshift_groups.items():
        parts.append(view_shift(p, ops.take(u0, erows), ops.take(dpose0, erows), key))
        rows.append(erows)
    return GraphState(nodes, ops.scatter_rows(parts, rows, batch.n_edges))


def forward(p: ParamTable, cfg: ModelConfig, batch: Batch) -> Prediction:
    state = initial_state(p, cfg, batch)
    state = forward_stack(p, cfg, Topology.from_batch(batch, cfg.coord_scale), state)
    feats = ops.take(state.nodes, batch.agent_nodes)
    return predict(p, feats, batch.agent_types, cfg)


def loss(p: ParamTable, cfg: ModelConfig, batch: Batch, pred: Prediction | None = None) -> LossBreakdown:
    pred = forward(p, cfg, batch) if pred is None else pred
    return mtp_loss(pred, batch.gt, batch.mask, batch.loss_weight, cfg.lambda_cls, cfg.winner)


def agent_node_key(cfg: ModelConfig) -> str:
    return node_key(NodeType.AGENT, cfg)


__all__ = ["init_params", "make_batch", "initial_state", "forward", "loss", "collate", "featurize"]
