import math

import numpy as np
import pytest

from hdgt.autodiff import ParamTable, Tensor, precision
from hdgt.batch import node_keys, relation_keys, relations_of
from hdgt.config import ModelConfig
from hdgt.core import (
    GraphState,
    Topology,
    edge_update,
    forward_stack,
    init_layer_params,
    layer_forward,
    node_update,
    relation_message,
    typed_node_aggregate,
)
from hdgt.model import make_batch

from conftest import make_scene


def t64(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def setup(cfg, seed=0, template="intersection", n_layers=None):
    with precision(np.float64):
        p = ParamTable(seed=seed)
        n = cfg.n_layers if n_layers is None else n_layers
        for k in range(n):
            init_layer_params(p, cfg, k)
        batch = make_batch([make_scene(seed, template)], cfg)
    topo = Topology.from_batch(batch, cfg.coord_scale)
    rng = np.random.default_rng(seed)
    nodes = rng.normal(size=(topo.n_nodes, cfg.hidden))
    edges = rng.normal(size=(len(topo.src), cfg.hidden))
    return p, topo, nodes, edges


# -- literal per-node re-implementation ------------------------------------------

def _ln(p, name, x, eps=1e-5):
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / math.sqrt(var + eps) * p[f"{name}.g"].data + p[f"{name}.b"].data


def _lin(p, name, x):
    out = x @ p[f"{name}.w"].data
    return out + p[f"{name}.b"].data if f"{name}.b" in p else out


def _mlp(p, name, x, n):
    for i in range(n):
        x = _lin(p, f"{name}.{i}", x)
        if i < n - 1:
            x = np.maximum(x, 0)
    return x


def oracle_layer(p, cfg, k, topo, nodes, edges, update_edges=True):
    h, heads = cfg.hidden, cfg.n_heads
    d = h // heads
    group_of = {int(v): g for g, rows in topo.node_groups.items() for v in rows}
    rel_of = {int(e): r for r, rows in topo.edge_groups.items() for e in rows}
    new_nodes = np.zeros_like(nodes)
    for v in range(topo.n_nodes):
        g = group_of[v]
        parts = []
        for r in relations_of(g, cfg):
            ins = [e for e in range(len(topo.src)) if topo.dst[e] == v and rel_of[e] == r]
            base = f"layer{k}.attn.{r}"
            if not ins:
                parts.append(np.zeros(h))
                continue
            kv = [_ln(p, f"{base}.ln_kv", edges[e]) for e in ins]
            if cfg.aggregation == "gcn_like":
                parts.append(sum(_mlp(p, f"{base}.msg", x, 2) for x in kv))
                continue
            q = _lin(p, f"{base}.wq", _ln(p, f"layer{k}.fuse.{g}.ln_q", nodes[v]))
            keys = [_lin(p, f"{base}.wk", x) for x in kv]
            vals = [_lin(p, f"{base}.wv", x) for x in kv]
            out = []
            for hd in range(heads):
                sl = slice(hd * d, (hd + 1) * d)
                s = [float(q[sl] @ kk[sl]) / math.sqrt(d) for kk in keys]
                m = max(s)
                w = [math.exp(x - m) for x in s]
                out.append(sum(wi / sum(w) * vv[sl] for wi, vv in zip(w, vals)))
            parts.append(_lin(p, f"{base}.wo", np.concatenate(out)))
        fused = _mlp(p, f"layer{k}.fuse.{g}.mlp", np.concatenate(parts), 2 if cfg.fusion_hidden else 1)
        mid = nodes[v] + fused
        new_nodes[v] = mid + _mlp(p, f"layer{k}.ffn.{g}.mlp", _ln(p, f"layer{k}.ffn.{g}.ln", mid), 2)
    if not update_edges:
        return new_nodes, edges
    new_edges = np.zeros_like(edges)
    for e in range(len(topo.src)):
        name = f"layer{k}.edge.{rel_of[e]}"
        x = np.concatenate([_ln(p, f"{name}.ln_u", nodes[topo.src[e]]), topo.dpose[e],
                            _ln(p, f"{name}.ln_e", edges[e])])
        new_edges[e] = edges[e] + _mlp(p, f"{name}.mlp", x, 2)
    return new_nodes, new_edges


VARIANTS = {
    "hetero": ModelConfig(hidden=8, n_heads=2, n_layers=2),
    "shared": ModelConfig(hidden=8, n_heads=2, n_layers=2, typing="shared"),
    "gcn": ModelConfig(hidden=8, n_heads=2, n_layers=2, aggregation="gcn_like"),
    "homogeneous": ModelConfig(hidden=8, n_heads=2, n_layers=2, homogeneous_map_node=True),
    "fc": ModelConfig(hidden=8, n_heads=2, n_layers=1, fully_connected=True),
}


@pytest.mark.parametrize("name", list(VARIANTS))
def test_layer_matches_loop_oracle(name):
    cfg = VARIANTS[name]
    p, topo, nodes, edges = setup(cfg)
    with precision(np.float64):
        out = layer_forward(p, cfg, 0, topo, GraphState(t64(nodes), t64(edges)))
    ref_nodes, ref_edges = oracle_layer(p, cfg, 0, topo, nodes, edges)
    np.testing.assert_allclose(out.nodes.data, ref_nodes, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.edges.data, ref_edges, rtol=0, atol=1e-10)


def test_stack_equals_stepwise_oracle():
    cfg = ModelConfig(hidden=8, n_heads=2, n_layers=3, fusion_hidden=False)
    p, topo, nodes, edges = setup(cfg, seed=2, template="roundabout")
    with precision(np.float64):
        out = forward_stack(p, cfg, topo, GraphState(t64(nodes), t64(edges)))
    n, e = nodes, edges
    for k in range(3):
        n, e = oracle_layer(p, cfg, k, topo, n, e, update_edges=k < 2)
    np.testing.assert_allclose(out.nodes.data, n, rtol=0, atol=1e-10)
    assert out.layer == 3


def test_updates_are_simultaneous():
    # the edge update must read layer k-1 nodes, not the freshly updated ones
    cfg = VARIANTS["hetero"]
    p, topo, nodes, edges = setup(cfg, seed=1)
    with precision(np.float64):
        out = layer_forward(p, cfg, 0, topo, GraphState(t64(nodes), t64(edges)))
    _, stale = oracle_layer(p, cfg, 0, topo, nodes, edges)
    np.testing.assert_allclose(out.edges.data, stale, atol=1e-10)


def test_attention_weights_sum_to_one():
    cfg = VARIANTS["hetero"]
    p, topo, nodes, edges = setup(cfg, seed=3)
    weights = {}
    with precision(np.float64):
        layer_forward(p, cfg, 0, topo, GraphState(t64(nodes), t64(edges)), attn_weights=weights)
    assert weights
    for r, w in weights.items():
        local = topo.node_local[topo.dst[topo.edge_groups[r]]]
        sums = np.zeros((local.max() + 1, w.shape[1]))
        np.add.at(sums, local, w)
        np.testing.assert_allclose(sums[np.unique(local)], 1.0, atol=1e-12)


def _single_relation(cfg, n_edges, same=False, seed=0):
    with precision(np.float64):
        p = ParamTable(seed=seed)
        init_layer_params(p, cfg, 0)
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(1 if same else n_edges, cfg.hidden))
    if same:
        e = np.repeat(e, n_edges, axis=0)
    q = t64(rng.normal(size=(1, cfg.hidden)))
    return p, q, e


def test_single_edge_gives_value_projection():
    cfg = VARIANTS["hetero"]
    p, q, e = _single_relation(cfg, 1)
    with precision(np.float64):
        out = relation_message(p, cfg, 0, "LaneAgent", q, t64(e), np.zeros(1, int), 1).data
    base = "layer0.attn.LaneAgent"
    ref = _lin(p, f"{base}.wo", _lin(p, f"{base}.wv", _ln(p, f"{base}.ln_kv", e[0])))
    np.testing.assert_allclose(out[0], ref, atol=1e-12)


def test_identical_edges_equal_one_edge():
    cfg = VARIANTS["hetero"]
    p, q, e = _single_relation(cfg, 3, same=True)
    with precision(np.float64):
        three = relation_message(p, cfg, 0, "AgentAgent", q, t64(e), np.zeros(3, int), 1).data
        one = relation_message(p, cfg, 0, "AgentAgent", q, t64(e[:1]), np.zeros(1, int), 1).data
    np.testing.assert_allclose(three, one, atol=1e-12)


def test_zero_ffn_is_identity_on_residual():
    cfg = VARIANTS["hetero"]
    with precision(np.float64):
        p = ParamTable()
        init_layer_params(p, cfg, 0)
        for name, t in p.items():
            if ".ffn." in name and ".mlp." in name:
                t.data[...] = 0
        rng = np.random.default_rng(0)
        v, fused = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
        out = node_update(p, cfg, 0, "Agent", t64(fused), t64(v)).data
    np.testing.assert_allclose(out, v + fused, atol=1e-15)


def test_zero_edge_mlp_keeps_edge():
    cfg = VARIANTS["hetero"]
    with precision(np.float64):
        p = ParamTable()
        init_layer_params(p, cfg, 0)
        for name, t in p.items():
            if ".edge." in name and ".mlp." in name:
                t.data[...] = 0
        rng = np.random.default_rng(0)
        e, u = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
        ident = t64(np.tile([0.0, 0.0, 1.0, 0.0], (2, 1)))
        out = edge_update(p, cfg, 0, "AgentLane", t64(e), t64(u), ident).data
        again = edge_update(p, cfg, 0, "AgentLane", t64(e), t64(u), ident).data
    np.testing.assert_array_equal(out, e)
    np.testing.assert_array_equal(out, again)


def test_isolated_node_still_updates():
    cfg = VARIANTS["hetero"]
    with precision(np.float64):
        p = ParamTable()
        init_layer_params(p, cfg, 0)
    topo = Topology(1, np.zeros(0, int), np.zeros(0, int), {"Agent": np.array([0])}, np.array([0]),
                    {}, {}, np.zeros((0, 4)))
    v = np.random.default_rng(0).normal(size=(1, 8))
    with precision(np.float64):
        out = layer_forward(p, cfg, 0, topo, GraphState(t64(v), t64(np.zeros((0, 8)))))
    fused = _mlp(p, "layer0.fuse.Agent.mlp", np.zeros(8 * len(relations_of("Agent", cfg))), 2)
    mid = v[0] + fused
    ref = mid + _mlp(p, "layer0.ffn.Agent.mlp", _ln(p, "layer0.ffn.Agent.ln", mid), 2)
    np.testing.assert_allclose(out.nodes.data[0], ref, atol=1e-12)


def test_typed_parameters_differ_by_group():
    cfg = VARIANTS["hetero"]
    with precision(np.float64):
        p = ParamTable()
        init_layer_params(p, cfg, 0)
        v = t64(np.ones((1, 8)))
        fused = t64(np.full((1, 8), 0.5))
        a = node_update(p, cfg, 0, "Agent", fused, v).data
        b = node_update(p, cfg, 0, "Lane", fused, v).data
    assert not np.allclose(a, b)


def test_parameter_sets_follow_typing():
    het = ModelConfig(hidden=8, n_heads=2)
    assert node_keys(het) == ["Agent", "Lane", "TrafficSign"]
    assert relations_of("Agent", het) == ["LaneAgent", "TrafficSignAgent", "AgentAgent"]
    assert relations_of("TrafficSign", het) == ["AgentTrafficSign"]
    shared = ModelConfig(hidden=8, n_heads=2, typing="shared")
    assert node_keys(shared) == ["shared"] and relation_keys(shared) == ["shared"]
    p = ParamTable()
    init_layer_params(p, shared, 0)
    assert {n.split(".")[2] for n in p.names()} == {"shared"}
    merged = ModelConfig(hidden=8, n_heads=2, merge_lane_connectivity=True)
    assert relations_of("Lane", merged) == ["AgentLane", "LaneLane"]


def test_last_layer_without_edge_params():
    cfg = VARIANTS["hetero"]
    p = ParamTable()
    init_layer_params(p, cfg, 1, with_edges=False)
    assert not any(".edge." in n for n in p.names())


def test_aggregate_rejects_wrong_group():
    cfg = VARIANTS["hetero"]
    p, topo, nodes, edges = setup(cfg)
    topo.edge_dst_group = dict(topo.edge_dst_group, LaneAgent="Lane")
    with pytest.raises(AssertionError):
        with precision(np.float64):
            typed_node_aggregate(p, cfg, 0, topo, GraphState(t64(nodes), t64(edges)), "Agent")
