"""Heterogeneous driving-graph construction.

Nodes are agents, lanes (split into pieces of bounded arc length) and traffic
signs (every non-lane map element).  Agent neighbourhoods use a speed-scaled,
type-buffered radius; lanes are additionally linked by their topology.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose2
from .scene.schema import HEADING, VX, VY, X, Y, AgentTrack, MapPolyline, Scene


class NodeType(str, Enum):
    AGENT = "Agent"
    LANE = "Lane"
    TRAFFIC_SIGN = "TrafficSign"
    MAP = "Map"  # lanes and signs merged (homogeneous-map ablation)


class EdgeType(str, Enum):
    AGENT_LANE = "AgentLane"
    AGENT_TRAFFIC_SIGN = "AgentTrafficSign"
    LANE_AGENT = "LaneAgent"
    LANE_NEXT_LANE = "LaneNextLane"
    LANE_PREVIOUS_LANE = "LanePreviousLane"
    LANE_LEFT_LANE = "LaneLeftLane"
    LANE_RIGHT_LANE = "LaneRightLane"
    TRAFFIC_SIGN_AGENT = "TrafficSignAgent"
    AGENT_AGENT = "AgentAgent"
    # Ablation-only relations.
    LANE_LANE = "LaneLane"
    GENERIC = "Generic"


EDGE_ORDER = {t: i for i, t in enumerate(EdgeType)}
LANE_CONNECTIVITY = {
    "exit": EdgeType.LANE_NEXT_LANE,
    "entry": EdgeType.LANE_PREVIOUS_LANE,
    "left": EdgeType.LANE_LEFT_LANE,
    "right": EdgeType.LANE_RIGHT_LANE,
}
_MIRROR = {EdgeType.LANE_NEXT_LANE: EdgeType.LANE_PREVIOUS_LANE,
           EdgeType.LANE_PREVIOUS_LANE: EdgeType.LANE_NEXT_LANE}

DEFAULT_BUFFERS = {"vehicle": 30.0, "pedestrian": 10.0, "cyclist": 20.0}


@dataclass(frozen=True)
class GraphConfig:
    eps_lane: float = 20.0
    buffers: dict = field(default_factory=lambda: dict(DEFAULT_BUFFERS))
    horizon_s: float | None = None  # None: use the scene's future horizon
    agent_agent: bool = True
    fully_connected: bool = False
    merge_lane_connectivity: bool = False
    homogeneous_map_node: bool = False

    def __hash__(self):
        return hash((self.eps_lane, tuple(sorted(self.buffers.items())), self.horizon_s,
                     self.agent_agent, self.fully_connected, self.merge_lane_connectivity,
                     self.homogeneous_map_node))


def node_types(cfg: GraphConfig) -> list[NodeType]:
    if cfg.homogeneous_map_node:
        return [NodeType.AGENT, NodeType.MAP]
    return [NodeType.AGENT, NodeType.LANE, NodeType.TRAFFIC_SIGN]


def in_edge_types(node_type: NodeType, cfg: GraphConfig) -> list[EdgeType]:
    """Relations that can point into a node of ``node_type``, in canonical order."""
    lane_in = ([EdgeType.LANE_LANE] if cfg.merge_lane_connectivity else
               [EdgeType.LANE_NEXT_LANE, EdgeType.LANE_PREVIOUS_LANE,
                EdgeType.LANE_LEFT_LANE, EdgeType.LANE_RIGHT_LANE])
    table = {
        NodeType.AGENT: [EdgeType.LANE_AGENT, EdgeType.TRAFFIC_SIGN_AGENT]
        + ([EdgeType.AGENT_AGENT] if cfg.agent_agent else []),
        NodeType.LANE: [EdgeType.AGENT_LANE] + lane_in,
        NodeType.TRAFFIC_SIGN: [EdgeType.AGENT_TRAFFIC_SIGN],
    }
    table[NodeType.MAP] = table[NodeType.LANE] + table[NodeType.TRAFFIC_SIGN]
    out = list(table[node_type])
    if cfg.fully_connected and node_type != NodeType.AGENT:
        out.append(EdgeType.GENERIC)
    return sorted(set(out), key=EDGE_ORDER.__getitem__)


def edge_types(cfg: GraphConfig) -> list[EdgeType]:
    found = {t for nt in node_types(cfg) for t in in_edge_types(nt, cfg)}
    return sorted(found, key=EDGE_ORDER.__getitem__)


# -- lanes ----------------------------------------------------------------------

def polyline_length(points: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def _cut(points: np.ndarray, s0: float, s1: float) -> np.ndarray:
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    tol = 1e-9 * max(1.0, arc[-1])  # vertices on a cut are produced by at() already
    inner = [p for p, s in zip(points, arc) if s0 + tol < s < s1 - tol]

    def at(s):
        i = int(np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(points) - 2))
        span = arc[i + 1] - arc[i]
        t = 0.0 if span == 0 else (s - arc[i]) / span
        return points[i] + t * (points[i + 1] - points[i])

    return np.array([at(s0)] + inner + [at(s1)])


def split_long_lanes(lanes, eps_lane: float) -> list[MapPolyline]:
    """Split lanes longer than ``eps_lane`` into ``ceil(length / eps_lane)`` equal pieces.

    Pieces are chained entry->exit; a split lane's predecessors attach to its
    first piece and successors to its last.  Each piece keeps the original
    left/right neighbours, resolved to the neighbour's nearest piece.
    """
    if eps_lane <= 0:
        raise ValueError("eps_lane must be positive")
    lanes = list(lanes)
    pieces: dict[str, list[MapPolyline]] = {}
    for lane in lanes:
        length = polyline_length(lane.points)
        # tolerance: a lane of exactly k * eps_lane must not flip to k + 1 pieces on rounding noise
        n = max(1, math.ceil(length / eps_lane - 1e-9)) if length > 0 else 1
        if n == 1:
            pieces[lane.id] = [lane]
            continue
        cuts = [length * k / n for k in range(n + 1)]
        cuts[-1] = length
        pieces[lane.id] = [
            MapPolyline(f"{lane.id}#{k}", lane.kind, _cut(lane.points, cuts[k], cuts[k + 1]), lane.subtype)
            for k in range(n)
        ]

    def nearest_piece(lane_id: str, point: np.ndarray) -> str:
        cands = pieces[lane_id]
        d = [np.linalg.norm(_midpoint(p.points) - point) for p in cands]
        return cands[int(np.argmin(d))].id

    out = []
    for lane in lanes:
        ps = pieces[lane.id]
        n = len(ps)
        for k, piece in enumerate(ps):
            mid = _midpoint(piece.points)
            entry = (ps[k - 1].id,) if k > 0 else tuple(pieces[b][-1].id for b in lane.entry)
            exit_ = (ps[k + 1].id,) if k < n - 1 else tuple(pieces[b][0].id for b in lane.exit)
            left = tuple(nearest_piece(b, mid) for b in lane.left)
            right = tuple(nearest_piece(b, mid) for b in lane.right)
            out.append(MapPolyline(piece.id, lane.kind, piece.points, lane.subtype,
                                   left, right, entry, exit_, lane.controlled_lanes, lane.light_states))
    return out


# -- reference poses ------------------------------------------------------------

def _midpoint(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total == 0:
        return points[0].astype(np.float64)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    half = total / 2.0
    i = int(np.clip(np.searchsorted(arc, half, side="right") - 1, 0, len(points) - 2))
    t = 0.0 if seg[i] == 0 else (half - arc[i]) / seg[i]
    return points[i] + t * (points[i + 1] - points[i])


def _polygon_centre(ring: np.ndarray) -> np.ndarray:
    pts = ring[:-1] if len(ring) > 1 and np.array_equal(ring[0], ring[-1]) else ring
    base = pts[0]
    local = pts - base  # shifting first keeps the cross products well conditioned far from the origin
    x, y = local[:, 0], local[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-12:
        return pts.mean(axis=0)
    return base + np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def reference_pose_of(element, l_obs: int | None = None) -> Pose2:
    """Origin and orientation of a node's local frame.

    Agents use their state at the final observed step (``l_obs - 1``; the last
    row when ``l_obs`` is None).  Polylines use the arc-length midpoint and the
    start->end direction (first segment for closed loops); polygons the area
    centroid and the direction of the longest edge (first one on ties).
    """
    if isinstance(element, AgentTrack):
        last = element.states[_last_observed_index(element, l_obs)]
        return Pose2.make(last[X], last[Y], last[HEADING])
    pts = np.asarray(element.points, dtype=np.float64)
    if element.is_polygon:
        centre = _polygon_centre(pts)
        edges = np.diff(pts, axis=0)
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        # near-equal edges count as tied so rounding noise cannot flip the frame
        longest = int(np.flatnonzero(lengths >= lengths.max() * (1 - 1e-9))[0])
        d = edges[longest]
        return Pose2.make(centre[0], centre[1], math.atan2(d[1], d[0]))
    mid = _midpoint(pts)
    d = pts[-1] - pts[0]
    if math.hypot(d[0], d[1]) <= 1e-6 * max(1.0, polyline_length(pts)):
        # closed loop: start->end is undefined, use the first non-degenerate segment
        segs = np.diff(pts, axis=0)
        moving = np.flatnonzero(np.hypot(segs[:, 0], segs[:, 1]) > 0)
        d = segs[moving[0]] if len(moving) else np.array([1.0, 0.0])
    return Pose2.make(mid[0], mid[1], math.atan2(d[1], d[0]))


def _last_observed_index(agent: AgentTrack, l_obs: int | None) -> int:
    return (len(agent.states) if l_obs is None else l_obs) - 1


def agent_threshold(agent: AgentTrack, horizon_s: float, buffers, l_obs: int | None = None) -> float:
    """Neighbourhood radius: final observed speed times horizon plus a per-type buffer."""
    last = agent.states[_last_observed_index(agent, l_obs)]
    return math.hypot(last[VX], last[VY]) * horizon_s + float(buffers[agent.agent_type])


# -- graph -----------------------------------------------------------------------

@dataclass
class HeteroGraph:
    node_ids: list[str]
    node_types: list[NodeType]
    elements: list  # AgentTrack | MapPolyline per node
    ref_poses: np.ndarray  # (N, 3) float64
    anchors: np.ndarray  # (N, 2) float64
    src: np.ndarray  # (E,) int
    dst: np.ndarray  # (E,) int
    etype: list[EdgeType]
    n_agents: int
    l_obs: int
    t_future: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edge_set(self) -> set[tuple[str, str, str]]:
        return {(self.node_ids[s], self.node_ids[d], t.value)
                for s, d, t in zip(self.src.tolist(), self.dst.tolist(), self.etype)}

    def in_edges(self, node: int) -> dict[EdgeType, list[int]]:
        groups: dict[EdgeType, list[int]] = defaultdict(list)
        for e in np.flatnonzero(self.dst == node):
            groups[self.etype[e]].append(int(e))
        return dict(groups)

    def to_json(self) -> str:
        nodes = [{"id": i, "type": t.value, "ref_pose": [float(v) for v in p]}
                 for i, t, p in zip(self.node_ids, self.node_types, self.ref_poses)]
        edges = [{"src": self.node_ids[s], "dst": self.node_ids[d], "type": t.value}
                 for s, d, t in zip(self.src.tolist(), self.dst.tolist(), self.etype)]
        return json.dumps({"nodes": nodes, "edges": edges}, indent=1)


def _piece_key(mid: str):
    base, _, k = mid.partition("#")
    return (base, int(k) if k else -1)


def _sign_or_map(cfg: GraphConfig, lane: bool) -> NodeType:
    if cfg.homogeneous_map_node:
        return NodeType.MAP
    return NodeType.LANE if lane else NodeType.TRAFFIC_SIGN


def _relation(src_kind: str, dst_kind: str) -> EdgeType:
    """Edge type of an agent-neighbourhood edge from the semantic kinds of its ends."""
    return {
        ("agent", "agent"): EdgeType.AGENT_AGENT,
        ("agent", "lane"): EdgeType.AGENT_LANE,
        ("agent", "sign"): EdgeType.AGENT_TRAFFIC_SIGN,
        ("lane", "agent"): EdgeType.LANE_AGENT,
        ("sign", "agent"): EdgeType.TRAFFIC_SIGN_AGENT,
    }[(src_kind, dst_kind)]


def _grid_pairs(anchors: np.ndarray, n_agents: int, thresholds: np.ndarray):
    """(agent, node) index pairs with distance < the agent's threshold."""
    if n_agents == 0 or len(anchors) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    cell = max(float(thresholds.max()), 1e-6)
    keys = np.floor(anchors / cell).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
    for j, (cx, cy) in enumerate(keys.tolist()):
        buckets[(cx, cy)].append(j)
    rows, cols = [], []
    for i in range(n_agents):
        cx, cy = keys[i]
        cand = [j for dx in (-1, 0, 1) for dy in (-1, 0, 1) for j in buckets.get((cx + dx, cy + dy), ())]
        cand = np.array(sorted(cand), dtype=np.int64)
        cand = cand[cand != i]
        diff = anchors[cand] - anchors[i]
        dist = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
        hit = cand[dist < thresholds[i]]
        rows.extend([i] * len(hit))
        cols.extend(hit.tolist())
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def build_graph(scene: Scene, cfg: GraphConfig | None = None) -> HeteroGraph:
    """Build the heterogeneous graph of a preprocessed scene."""
    cfg = cfg or GraphConfig()
    horizon = scene.horizon_s if cfg.horizon_s is None else cfg.horizon_s
    agents = sorted(scene.agents, key=lambda a: a.id)
    lanes = split_long_lanes([m for m in scene.map if m.is_lane], cfg.eps_lane)
    signs = [m for m in scene.map if not m.is_lane]
    map_nodes = sorted(lanes + signs, key=lambda m: _piece_key(m.id))

    elements = list(agents) + map_nodes
    ids = [e.id for e in elements]
    kinds = ["agent"] * len(agents) + ["lane" if m.is_lane else "sign" for m in map_nodes]
    types = [NodeType.AGENT] * len(agents) + [_sign_or_map(cfg, m.is_lane) for m in map_nodes]
    poses = [reference_pose_of(e, scene.l_obs) for e in elements]
    ref = np.array(poses, dtype=np.float64).reshape(-1, 3)
    anchors = ref[:, :2].copy()
    index = {nid: i for i, nid in enumerate(ids)}

    triples: set[tuple[int, int, EdgeType]] = set()
    thresholds = np.array([agent_threshold(a, horizon, cfg.buffers, scene.l_obs) for a in agents])
    rows, cols = _grid_pairs(anchors, len(agents), thresholds)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if kinds[j] == "agent" and not cfg.agent_agent:
            continue
        triples.add((i, j, _relation("agent", kinds[j])))
        triples.add((j, i, _relation(kinds[j], "agent")))

    for i, m in enumerate(map_nodes, start=len(agents)):
        if not m.is_lane:
            continue
        for key, rel in LANE_CONNECTIVITY.items():
            for other in getattr(m, key):
                j = index[other]
                if j == i:
                    continue
                triples.add((i, j, rel))
                if rel in _MIRROR:
                    triples.add((j, i, _MIRROR[rel]))

    if cfg.merge_lane_connectivity:
        triples = {(s, d, EdgeType.LANE_LANE if t in LANE_CONNECTIVITY.values() else t)
                   for s, d, t in triples}
    if cfg.fully_connected:
        linked = {(s, d) for s, d, _ in triples}
        n = len(elements)
        for s in range(n):
            for d in range(n):
                if s == d or (s, d) in linked:
                    continue
                if kinds[s] == kinds[d] == "agent" and not cfg.agent_agent:
                    continue
                if "agent" in (kinds[s], kinds[d]):
                    triples.add((s, d, _relation(kinds[s], kinds[d])))
                else:
                    triples.add((s, d, EdgeType.GENERIC))

    ordered = sorted(triples, key=lambda t: (EDGE_ORDER[t[2]], t[1], t[0]))
    src = np.array([t[0] for t in ordered], dtype=np.int64)
    dst = np.array([t[1] for t in ordered], dtype=np.int64)
    return HeteroGraph(ids, types, elements, ref, anchors, src, dst, [t[2] for t in ordered],
                       len(agents), scene.l_obs, scene.t_future)
