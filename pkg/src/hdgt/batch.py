"""Turn preprocessed scenes into frame-normalised arrays and collate them.

A batch is the disjoint union of the scene graphs, so one forward pass covers
every scene in it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .geometry import Pose2, delta_pose_batch, local_heading, rotate_local_vector, to_local_point
from .graph import EdgeType, HeteroGraph, NodeType, build_graph, in_edge_types, node_types
from .scene.preprocess import Preprocessed
from .scene.schema import AGENT_TYPES, HEADING, MAP_KINDS, VALID, VX, VY, X, Y, AgentTrack

N_KINDS = len(MAP_KINDS)
N_SUBTYPES = 8
N_LIGHTS = 4  # none, green, yellow, red
KIND_INDEX = {k: i for i, k in enumerate(MAP_KINDS)}
AGENT_TYPE_INDEX = {t: i for i, t in enumerate(AGENT_TYPES)}
IDENTITY_POSE = np.array([0.0, 0.0, 1.0, 0.0])


def agent_channels(cfg: ModelConfig) -> int:
    return 10 if cfg.use_height else 9


def node_key(node_type: NodeType, cfg: ModelConfig) -> str:
    return "shared" if cfg.typing == "shared" else node_type.value


def relation_key(edge_type: EdgeType, cfg: ModelConfig, dst_type: NodeType | None = None) -> str:
    """Parameter-group name of a relation.

    Generic edges of the fully connected ablation can end in several node
    types, so their key carries the destination type.
    """
    if cfg.typing == "shared":
        return "shared"
    if edge_type == EdgeType.GENERIC:
        return f"{edge_type.value}{dst_type.value}"
    return edge_type.value


def node_keys(cfg: ModelConfig) -> list[str]:
    return list(dict.fromkeys(node_key(t, cfg) for t in node_types(cfg.graph)))


def relations_of(key: str, cfg: ModelConfig) -> list[str]:
    """Relation keys feeding the fusion concat of node group ``key`` (canonical order)."""
    if cfg.typing == "shared":
        return ["shared"]
    nt = NodeType(key)
    return [relation_key(t, cfg, nt) for t in in_edge_types(nt, cfg.graph)]


def relation_keys(cfg: ModelConfig) -> list[str]:
    return list(dict.fromkeys(r for k in node_keys(cfg) for r in relations_of(k, cfg)))


def normalize_agent_inputs(track: AgentTrack, ref: Pose2, l_obs: int, use_height: bool = False) -> np.ndarray:
    """(l_obs, C) channels: x, y, vx, vy, sin h, cos h, valid, width, length[, height]."""
    obs = track.states[:l_obs]
    pos = to_local_point(obs[:, [X, Y]], ref)
    vel = rotate_local_vector(obs[:, [VX, VY]], ref)
    head = local_heading(obs[:, HEADING], ref)
    cols = [pos, vel, np.sin(head)[:, None], np.cos(head)[:, None], obs[:, [VALID]],
            np.tile(np.asarray(track.bbox[:2], dtype=np.float64), (l_obs, 1))]
    if use_height:
        cols.append(np.full((l_obs, 1), track.bbox[2]))
    return np.concatenate(cols, axis=1)


def scale_agent_inputs(x: np.ndarray, coord_scale: float) -> np.ndarray:
    x = x.copy()
    x[..., :4] *= coord_scale
    return x


def _light_index(element, l_obs: int) -> int:
    if element.kind != "traffic_light" or not element.light_states:
        return 0
    return 1 + int(element.light_states[min(l_obs, len(element.light_states)) - 1])


@dataclass
class SceneSample:
    scene_id: str
    graph: HeteroGraph
    frames: np.ndarray  # (N, 3) pose each node is normalised into
    agent_ids: list[str]
    agent_types: list[str]
    agent_inputs: np.ndarray  # (A, L, C) float64, unscaled
    map_points: list[np.ndarray]  # M arrays (P_i, 2) in node frame
    map_kind: np.ndarray
    map_subtype: np.ndarray
    map_light: np.ndarray
    dpose: np.ndarray  # (E, 4) used by edge updates
    dpose_init: np.ndarray  # (E, 4) used by the view-shift unit
    gt_future: np.ndarray  # (A, T, 2) in each agent's frame
    loss_mask: np.ndarray  # (A, T) bool
    is_target: np.ndarray  # (A,) bool
    rel_agent_inputs: np.ndarray | None = None  # (E_a, L, C): source agent in target frame
    rel_map_points: list[np.ndarray] | None = None
    extras: dict = field(default_factory=dict)


def scene_frame(agents: list[AgentTrack], l_obs: int) -> Pose2:
    """Single reference used by the fixed-reference variant: first target by id."""
    ordered = sorted(agents, key=lambda a: a.id)
    chosen = next((a for a in ordered if a.is_target), ordered[0])
    last = chosen.states[l_obs - 1]
    return Pose2.make(last[X], last[Y], last[HEADING])


def featurize(pre: Preprocessed, cfg: ModelConfig, t_future: int | None = None) -> SceneSample:
    scene = pre.scene
    t_future = cfg.t_future if t_future is None else t_future
    graph = build_graph(scene, cfg.graph)
    n, a = graph.n_nodes, graph.n_agents
    if cfg.mode == "fixed_reference" and a:
        ref = scene_frame(list(graph.elements[:a]), scene.l_obs)
        frames = np.tile(np.array(ref, dtype=np.float64), (n, 1))
    else:
        frames = graph.ref_poses.copy()
    poses = [Pose2(*f) for f in frames]

    l_obs = scene.l_obs
    agents = graph.elements[:a]
    agent_inputs = np.stack([normalize_agent_inputs(t, poses[i], l_obs, cfg.use_height)
                             for i, t in enumerate(agents)]) if a else np.zeros((0, l_obs, agent_channels(cfg)))
    map_elems = graph.elements[a:]
    map_points = [to_local_point(m.points, poses[a + i]) for i, m in enumerate(map_elems)]
    map_kind = np.array([KIND_INDEX[m.kind] for m in map_elems], dtype=np.int64)
    map_subtype = np.array([KIND_INDEX[m.kind] * N_SUBTYPES + min(max(m.subtype, 0), N_SUBTYPES - 1)
                            for m in map_elems], dtype=np.int64)
    map_light = np.array([_light_index(m, l_obs) for m in map_elems], dtype=np.int64)

    rotated = cfg.delta_frame == "target"
    dpose = delta_pose_batch(frames[graph.src], frames[graph.dst], rotated=rotated)
    dpose_init = np.tile(IDENTITY_POSE, (graph.n_edges, 1)) if cfg.mode == "relative_edge" else dpose

    gt = np.zeros((a, t_future, 2))
    mask = np.zeros((a, t_future), dtype=bool)
    for i, t in enumerate(agents):
        fut = t.states[l_obs:l_obs + t_future]
        if len(fut):
            gt[i, :len(fut)] = to_local_point(fut[:, [X, Y]], poses[i])
            m = pre.loss_mask.get(t.id, np.zeros(0, dtype=bool))[:t_future]
            mask[i, :len(m)] = m

    sample = SceneSample(scene.id, graph, frames, [t.id for t in agents], [t.agent_type for t in agents],
                         agent_inputs, map_points, map_kind, map_subtype, map_light, dpose, dpose_init,
                         gt, mask, np.array([t.is_target for t in agents], dtype=bool))
    if cfg.mode == "relative_edge":
        src_agent = graph.src < a
        rel_agents, rel_maps = [], []
        for e in range(graph.n_edges):
            s, d = int(graph.src[e]), int(graph.dst[e])
            if src_agent[e]:
                rel_agents.append(normalize_agent_inputs(graph.elements[s], poses[d], l_obs, cfg.use_height))
            else:
                rel_maps.append(to_local_point(graph.elements[s].points, poses[d]))
        sample.rel_agent_inputs = (np.stack(rel_agents) if rel_agents
                                   else np.zeros((0, l_obs, agent_channels(cfg))))
        sample.rel_map_points = rel_maps
    return sample


def pad_points(points: list[np.ndarray]) -> np.ndarray:
    """Stack point sets, padding with copies of each set's first point (max-pool safe)."""
    if not points:
        return np.zeros((0, 1, 2))
    p = max(len(x) for x in points)
    out = np.empty((len(points), p, 2))
    for i, x in enumerate(points):
        out[i, :len(x)] = x
        out[i, len(x):] = x[0]
    return out


@dataclass
class Batch:
    samples: list[SceneSample]
    n_nodes: int
    n_edges: int
    node_groups: dict[str, np.ndarray]  # key -> global node rows
    node_local: np.ndarray  # (N,) row within its group
    node_group_of: list[str]
    agent_nodes: np.ndarray
    map_nodes: np.ndarray
    agent_inputs: np.ndarray
    map_points: np.ndarray
    map_kind: np.ndarray
    map_subtype: np.ndarray
    map_light: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_groups: dict[str, np.ndarray]  # relation key -> edge rows
    edge_dst_group: dict[str, str]  # relation key -> node group of its destinations
    viewshift_groups: dict[str, np.ndarray]  # source node key -> edge rows
    dpose: np.ndarray
    dpose_init: np.ndarray
    agent_type_groups: dict[str, np.ndarray]
    agent_frames: np.ndarray
    agent_ids: list[tuple[str, str]]  # (scene id, agent id)
    agent_types: list[str]
    gt: np.ndarray
    mask: np.ndarray
    is_target: np.ndarray
    loss_weight: np.ndarray  # (A,) per-agent weight; 0 for non-targets / unsupervised
    rel_agent_edges: np.ndarray | None = None
    rel_agent_inputs: np.ndarray | None = None
    rel_map_edges: np.ndarray | None = None
    rel_map_points: np.ndarray | None = None
    rel_map_kind: np.ndarray | None = None
    rel_map_subtype: np.ndarray | None = None
    rel_map_light: np.ndarray | None = None


def collate(samples: list[SceneSample], cfg: ModelConfig) -> Batch:
    node_off = 0
    edge_off = 0
    src, dst, group_of = [], [], []
    agent_nodes, map_nodes = [], []
    rel_groups: dict[str, list[np.ndarray]] = {}
    vs_groups: dict[str, list[np.ndarray]] = {}
    agent_frames, agent_ids, agent_types = [], [], []
    weights = []
    rel_agent_edges, rel_map_edges = [], []
    for s in samples:
        g = s.graph
        a = g.n_agents
        keys = [node_key(t, cfg) for t in g.node_types]
        group_of.extend(keys)
        agent_nodes.append(np.arange(a) + node_off)
        map_nodes.append(np.arange(a, g.n_nodes) + node_off)
        src.append(g.src + node_off)
        dst.append(g.dst + node_off)
        rkeys = np.array([relation_key(t, cfg, g.node_types[d]) for t, d in zip(g.etype, g.dst.tolist())],
                         dtype=object)
        skeys = np.array([keys[i] for i in g.src.tolist()], dtype=object)
        for r in dict.fromkeys(rkeys.tolist()):
            rel_groups.setdefault(r, []).append(np.flatnonzero(rkeys == r) + edge_off)
        for k in dict.fromkeys(skeys.tolist()):
            vs_groups.setdefault(k, []).append(np.flatnonzero(skeys == k) + edge_off)
        if cfg.mode == "relative_edge":
            rel_agent_edges.append(np.flatnonzero(g.src < a) + edge_off)
            rel_map_edges.append(np.flatnonzero(g.src >= a) + edge_off)
        agent_frames.append(s.frames[:a])
        agent_ids.extend((s.scene_id, i) for i in s.agent_ids)
        agent_types.extend(s.agent_types)
        supervised = s.is_target & s.loss_mask.any(axis=1)
        n_sup = int(supervised.sum())
        weights.append(np.where(supervised, 1.0 / max(n_sup, 1), 0.0))
        node_off += g.n_nodes
        edge_off += g.n_edges

    n_scenes_supervised = sum(1 for w in weights if w.sum() > 0)
    loss_weight = np.concatenate(weights) / max(n_scenes_supervised, 1) if weights else np.zeros(0)
    group_arr = np.array(group_of, dtype=object)
    node_groups = {k: np.flatnonzero(group_arr == k) for k in dict.fromkeys(group_of)}
    node_local = np.zeros(node_off, dtype=np.int64)
    for rows in node_groups.values():
        node_local[rows] = np.arange(len(rows))
    src_all = np.concatenate(src) if src else np.zeros(0, np.int64)
    dst_all = np.concatenate(dst) if dst else np.zeros(0, np.int64)
    edge_groups = {r: np.concatenate(v) for r, v in rel_groups.items()}
    edge_dst_group = {}
    for r, rows in edge_groups.items():
        owners = set(group_arr[dst_all[rows]].tolist())
        if len(owners) != 1:
            raise AssertionError(f"relation {r} points into several node groups: {owners}")
        edge_dst_group[r] = owners.pop()
    agent_types_arr = np.array(agent_types, dtype=object)
    batch = Batch(
        samples=samples,
        n_nodes=node_off,
        n_edges=edge_off,
        node_groups=node_groups,
        node_local=node_local,
        node_group_of=group_of,
        agent_nodes=np.concatenate(agent_nodes) if agent_nodes else np.zeros(0, np.int64),
        map_nodes=np.concatenate(map_nodes) if map_nodes else np.zeros(0, np.int64),
        agent_inputs=np.concatenate([s.agent_inputs for s in samples]),
        map_points=pad_points([p for s in samples for p in s.map_points]),
        map_kind=np.concatenate([s.map_kind for s in samples]),
        map_subtype=np.concatenate([s.map_subtype for s in samples]),
        map_light=np.concatenate([s.map_light for s in samples]),
        src=src_all,
        dst=dst_all,
        edge_groups=edge_groups,
        edge_dst_group=edge_dst_group,
        viewshift_groups={k: np.concatenate(v) for k, v in vs_groups.items()},
        dpose=np.concatenate([s.dpose for s in samples]) if samples else np.zeros((0, 4)),
        dpose_init=np.concatenate([s.dpose_init for s in samples]) if samples else np.zeros((0, 4)),
        agent_type_groups={t: np.flatnonzero(agent_types_arr == t) for t in AGENT_TYPES
                           if (agent_types_arr == t).any()},
        agent_frames=np.concatenate(agent_frames) if agent_frames else np.zeros((0, 3)),
        agent_ids=agent_ids,
        agent_types=agent_types,
        gt=np.concatenate([s.gt_future for s in samples]),
        mask=np.concatenate([s.loss_mask for s in samples]),
        is_target=np.concatenate([s.is_target for s in samples]),
        loss_weight=loss_weight,
    )
    if cfg.mode == "relative_edge":
        batch.rel_agent_edges = np.concatenate(rel_agent_edges)
        batch.rel_agent_inputs = np.concatenate([s.rel_agent_inputs for s in samples])
        batch.rel_map_edges = np.concatenate(rel_map_edges)
        batch.rel_map_points = pad_points([p for s in samples for p in s.rel_map_points])
        src_map = batch.src[batch.rel_map_edges]
        # map attributes of each map-sourced edge's source node
        map_row = np.full(node_off, -1, dtype=np.int64)
        map_row[batch.map_nodes] = np.arange(len(batch.map_nodes))
        rows = map_row[src_map]
        batch.rel_map_kind = batch.map_kind[rows]
        batch.rel_map_subtype = batch.map_subtype[rows]
        batch.rel_map_light = batch.map_light[rows]
    return batch
