"""Deterministic synthetic driving scenes.

Three map templates (straight multi-lane road, four-way intersection,
roundabout) with vehicles and cyclists following lane centerlines and
pedestrians walking along crosswalks.  Vehicles facing a red light brake to a
stop before the end of their approach lane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .schema import LIGHT_GREEN, LIGHT_RED, AgentTrack, MapPolyline, Scene

TEMPLATES = ("straight", "intersection", "roundabout")
LANE_WIDTH = 3.5
_SUBSTEPS = 10


@dataclass(frozen=True)
class GeneratorConfig:
    template: str = "straight"
    n_vehicles: int = 4
    n_pedestrians: int = 1
    n_cyclists: int = 0
    n_lanes: int = 2
    segment_length: float = 40.0
    n_segments: int = 3
    noise_pos: float = 0.0
    noise_speed: float = 0.0
    missing_prob: float = 0.0
    frequency_hz: float = 10.0
    l_obs: int = 11
    t_future: int = 30
    target_types: tuple[str, ...] = ("vehicle", "pedestrian", "cyclist")

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}; choose from {TEMPLATES}")
        for name in ("n_vehicles", "n_pedestrians", "n_cyclists", "n_lanes", "n_segments"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


# -- map construction ---------------------------------------------------------

class _MapBuilder:
    def __init__(self):
        self.elements: dict[str, dict] = {}

    def add(self, mid: str, kind: str, points, subtype: int = 0, **extra) -> str:
        self.elements[mid] = dict(id=mid, kind=kind, points=np.asarray(points, dtype=np.float64),
                                  subtype=subtype, left=[], right=[], entry=[], exit=[],
                                  controlled_lanes=[], light_states=[], **extra)
        return mid

    def connect(self, a: str, b: str) -> None:
        """Lane ``b`` follows lane ``a``."""
        self.elements[a]["exit"].append(b)
        self.elements[b]["entry"].append(a)

    def neighbors(self, left: str, right: str) -> None:
        self.elements[right]["left"].append(left)
        self.elements[left]["right"].append(right)

    def build(self) -> tuple[MapPolyline, ...]:
        out = []
        for e in self.elements.values():
            out.append(MapPolyline(e["id"], e["kind"], e["points"], e["subtype"],
                                   tuple(e["left"]), tuple(e["right"]), tuple(e["entry"]),
                                   tuple(e["exit"]), tuple(e["controlled_lanes"]),
                                   tuple(e["light_states"])))
        return tuple(out)


def _line(p0, p1, n: int = 9) -> np.ndarray:
    return np.linspace(np.asarray(p0, float), np.asarray(p1, float), n)


def _bezier(p0, p1, p2, n: int = 11) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2 = (np.asarray(p, float) for p in (p0, p1, p2))
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _rect(center, heading: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    u, v = np.array([c, s]), np.array([-s, c])
    center = np.asarray(center, float)
    corners = [center + a * u * length / 2 + b * v * width / 2
               for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
    return np.array(corners + [corners[0]])


def _straight_map(cfg: GeneratorConfig, rng, n_steps: int):
    mb = _MapBuilder()
    n_lanes = max(cfg.n_lanes, 1) if cfg.n_lanes else 0
    lanes_by_seg: list[list[str]] = []
    for s in range(cfg.n_segments):
        row = []
        x0, x1 = s * cfg.segment_length, (s + 1) * cfg.segment_length
        for k in range(n_lanes):
            y = k * LANE_WIDTH
            row.append(mb.add(f"lane_{s}_{k}", "lane", _line((x0, y), (x1, y)), subtype=0))
        lanes_by_seg.append(row)
    for s in range(cfg.n_segments):
        for k in range(n_lanes):
            if s + 1 < cfg.n_segments:
                mb.connect(lanes_by_seg[s][k], lanes_by_seg[s + 1][k])
            if k + 1 < n_lanes:
                mb.neighbors(lanes_by_seg[s][k + 1], lanes_by_seg[s][k])
    total = cfg.n_segments * cfg.segment_length
    if n_lanes:
        for k in range(n_lanes - 1):
            y = (k + 0.5) * LANE_WIDTH
            mb.add(f"roadline_{k}", "road_line", _line((0, y), (total, y)), subtype=1)
        mb.add("curb_right", "curb", _line((0, -LANE_WIDTH / 2), (total, -LANE_WIDTH / 2)))
        mb.add("curb_left", "curb", _line((0, (n_lanes - 0.5) * LANE_WIDTH), (total, (n_lanes - 0.5) * LANE_WIDTH)))
    road_mid = (n_lanes - 1) * LANE_WIDTH / 2
    cw_x = total * 0.7
    crosswalks = [mb.add("crosswalk_0", "crosswalk",
                         _rect((cw_x, road_mid), math.pi / 2, n_lanes * LANE_WIDTH + 4.0, 4.0))]
    mb.add("speed_bump_0", "speed_bump", _rect((total * 0.3, road_mid), math.pi / 2,
                                               max(n_lanes, 1) * LANE_WIDTH, 1.0))
    red_lanes: set[str] = set()
    stops: dict[str, float] = {}
    if n_lanes:
        # Light just before the crosswalk; controls the segment that contains it.
        seg = min(int(cw_x // cfg.segment_length), cfg.n_segments - 1)
        controlled = lanes_by_seg[seg]
        state = LIGHT_RED if rng.random() < 0.5 else LIGHT_GREEN
        light = mb.add("light_0", "traffic_light", _line((cw_x - 3.0, -LANE_WIDTH), (cw_x - 3.0, -LANE_WIDTH + 0.5), 2))
        mb.elements[light]["controlled_lanes"] = list(controlled)
        mb.elements[light]["light_states"] = [state] * n_steps
        if state == LIGHT_RED:
            for lid in controlled:
                red_lanes.add(lid)
                stops[lid] = cw_x - 3.0 - seg * cfg.segment_length
    return mb, crosswalks, red_lanes, stops


def _intersection_map(cfg: GeneratorConfig, rng, n_steps: int):
    mb = _MapBuilder()
    half = LANE_WIDTH  # half width of the box
    arm = cfg.segment_length
    incoming: dict[int, str] = {}
    outgoing: dict[int, str] = {}
    crosswalks = []
    # Arm k points outward along angle k*pi/2; right-hand traffic.
    for k in range(4):
        ang = k * math.pi / 2
        u = np.array([math.cos(ang), math.sin(ang)])
        v = np.array([-math.sin(ang), math.cos(ang)])
        in_off, out_off = -v * LANE_WIDTH / 2, v * LANE_WIDTH / 2
        # incoming drives toward the centre on the right side of the arm
        p_far = u * (half + arm)
        p_near = u * half
        incoming[k] = mb.add(f"in_{k}", "lane", _line(p_far + v * LANE_WIDTH / 2, p_near + v * LANE_WIDTH / 2), subtype=0)
        outgoing[k] = mb.add(f"out_{k}", "lane", _line(p_near + in_off, p_far + in_off), subtype=0)
        mb.add(f"roadline_{k}", "road_line", _line(p_near, p_far), subtype=2)
        mb.add(f"curb_{k}a", "curb", _line(p_near + v * LANE_WIDTH * 1.5, p_far + v * LANE_WIDTH * 1.5))
        mb.add(f"curb_{k}b", "curb", _line(p_near - v * LANE_WIDTH * 1.5, p_far - v * LANE_WIDTH * 1.5))
        crosswalks.append(mb.add(f"crosswalk_{k}", "crosswalk",
                                 _rect(u * (half + 3.0), ang + math.pi / 2, 4 * LANE_WIDTH, 3.0)))
    connectors: dict[str, tuple[int, int]] = {}
    for a in range(4):
        for b in range(4):
            if a == b:
                continue
            start = mb.elements[incoming[a]]["points"][-1]
            end = mb.elements[outgoing[b]]["points"][0]
            turn = (b - a) % 4
            if turn == 2:
                pts = _line(start, end, 9)
            else:
                ctrl = start + (end - start) * 0.5
                # control point at the intersection of the two travel directions
                din = -np.array([math.cos(a * math.pi / 2), math.sin(a * math.pi / 2)])
                dout = np.array([math.cos(b * math.pi / 2), math.sin(b * math.pi / 2)])
                mat = np.stack([din, -dout], axis=1)
                if abs(np.linalg.det(mat)) > 1e-9:
                    t = np.linalg.solve(mat, end - start)
                    ctrl = start + t[0] * din
                pts = _bezier(start, ctrl, end)
            cid = mb.add(f"conn_{a}_{b}", "lane", pts, subtype=1)
            connectors[cid] = (a, b)
            mb.connect(incoming[a], cid)
            mb.connect(cid, outgoing[b])
    # Arms 0/2 share a phase, 1/3 the other.
    red_phase = int(rng.integers(0, 2))
    red_lanes: set[str] = set()
    stops: dict[str, float] = {}
    use_lights = rng.random() < 0.5
    for k in range(4):
        pts = mb.elements[incoming[k]]["points"]
        pos = pts[-1] + (pts[0] - pts[-1]) / np.linalg.norm(pts[0] - pts[-1]) * 2.0
        if use_lights:
            state = LIGHT_RED if k % 2 == red_phase else LIGHT_GREEN
            lid = mb.add(f"light_{k}", "traffic_light", np.array([pos, pos + 0.3]))
            mb.elements[lid]["controlled_lanes"] = [incoming[k]]
            mb.elements[lid]["light_states"] = [state] * n_steps
            if state == LIGHT_RED:
                red_lanes.add(incoming[k])
                stops[incoming[k]] = arm - 6.0
        else:
            sid = mb.add(f"stop_{k}", "stop_sign", np.array([pos, pos + 0.3]))
            mb.elements[sid]["controlled_lanes"] = [incoming[k]]
    return mb, crosswalks, red_lanes, stops


def _roundabout_map(cfg: GeneratorConfig, rng, n_steps: int):
    mb = _MapBuilder()
    radius = 15.0
    n_arcs = 8
    ring = []
    for i in range(n_arcs):
        a0, a1 = 2 * math.pi * i / n_arcs, 2 * math.pi * (i + 1) / n_arcs
        ang = np.linspace(a0, a1, 7)
        ring.append(mb.add(f"ring_{i}", "lane", np.stack([radius * np.cos(ang), radius * np.sin(ang)], 1), subtype=2))
    for i in range(n_arcs):
        mb.connect(ring[i], ring[(i + 1) % n_arcs])
    crosswalks = []
    arm = cfg.segment_length
    for k in range(4):
        ang = k * math.pi / 2
        u = np.array([math.cos(ang), math.sin(ang)])
        v = np.array([-math.sin(ang), math.cos(ang)])
        ring_idx = 2 * k
        entry_pt = mb.elements[ring[ring_idx]]["points"][0]
        exit_pt = mb.elements[ring[(ring_idx + 1) % n_arcs]]["points"][0]
        lane_in = mb.add(f"entry_{k}", "lane", _bezier(u * (radius + arm) - v * 2.0, u * (radius + 4) - v * 3.0, entry_pt), subtype=0)
        lane_out = mb.add(f"exit_{k}", "lane", _bezier(exit_pt, u * (radius + 4) + v * 3.0, u * (radius + arm) + v * 2.0), subtype=0)
        mb.connect(lane_in, ring[ring_idx])
        mb.connect(ring[ring_idx], lane_out)
        crosswalks.append(mb.add(f"crosswalk_{k}", "crosswalk", _rect(u * (radius + 10.0), ang + math.pi / 2, 12.0, 3.0)))
        mb.add(f"curb_{k}", "curb", _line(u * (radius + 6) + v * 5.0, u * (radius + arm) + v * 5.0))
    mb.add("island", "curb", np.stack([8 * np.cos(np.linspace(0, 2 * math.pi, 13)), 8 * np.sin(np.linspace(0, 2 * math.pi, 13))], 1))
    return mb, crosswalks, set(), {}


# -- motion -------------------------------------------------------------------

def _arc(points: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def _sample_along(points: np.ndarray, s: np.ndarray):
    """Position and unit tangent at arc lengths ``s`` (extrapolates past the end)."""
    arc = _arc(points)
    seg = np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(points) - 2)
    d = points[seg + 1] - points[seg]
    seg_len = np.maximum(arc[seg + 1] - arc[seg], 1e-12)
    tangent = d / seg_len[:, None]
    pos = points[seg] + tangent * (s - arc[seg])[:, None]
    return pos, tangent


def _route(mb: _MapBuilder, start: str, min_length: float, rng) -> tuple[np.ndarray, list[tuple[str, float]]]:
    """Concatenate lanes from ``start`` following random exits; returns points and lane start offsets."""
    pts = mb.elements[start]["points"]
    offsets = [(start, 0.0)]
    lane = start
    for _ in range(32):
        if _arc(pts)[-1] >= min_length:
            break
        exits = mb.elements[lane]["exit"]
        if not exits:
            break
        lane = exits[int(rng.integers(0, len(exits)))]
        offsets.append((lane, _arc(pts)[-1]))
        nxt = mb.elements[lane]["points"]
        pts = np.concatenate([pts, nxt[1:]], axis=0)
    return pts, offsets


def _integrate_speed(v0: float, accel: float, n_steps: int, dt: float, stop_s=None, s0: float = 0.0):
    """Arc length and speed per timestep; brakes to stop at ``stop_s`` if given."""
    s, v = s0, v0
    out_s, out_v = [s], [v]
    h = dt / _SUBSTEPS
    for _ in range(n_steps - 1):
        for _ in range(_SUBSTEPS):
            a = accel
            if stop_s is not None:
                gap = stop_s - s
                if gap > 0.05 and v * v / (2 * gap) > 1.0:
                    a = -v * v / (2 * gap)
                elif gap <= 0.05:
                    a, v = 0.0, 0.0
            v = max(v + a * h, 0.0)
            s += v * h
        out_s.append(s)
        out_v.append(v)
    return np.array(out_s), np.array(out_v)


def _bbox(agent_type: str, rng) -> tuple[float, float, float]:
    base = {"vehicle": (1.9, 4.6, 1.5), "pedestrian": (0.6, 0.6, 1.7), "cyclist": (0.7, 1.8, 1.7)}[agent_type]
    jitter = 1.0 + 0.1 * (rng.random(3) - 0.5)
    return tuple(float(round(b * j, 3)) for b, j in zip(base, jitter))


def _states_from_path(pos, tangent, speed) -> np.ndarray:
    heading = np.arctan2(tangent[:, 1], tangent[:, 0])
    vel = tangent * speed[:, None]
    return np.column_stack([pos, vel, heading, np.ones(len(pos))])


def _lane_agent(mb, lane_ids, agent_type, cfg, rng, n_steps, dt, red_lanes, stops, lateral=0.0):
    start = lane_ids[int(rng.integers(0, len(lane_ids)))]
    if agent_type == "vehicle":
        v0 = float(rng.uniform(4.0, 12.0))
    else:
        v0 = float(rng.uniform(2.5, 5.0))
    accel = float(rng.uniform(-0.5, 0.5))
    lane_len = _arc(mb.elements[start]["points"])[-1]
    s0 = float(rng.uniform(0.0, 0.6 * lane_len))
    path, offsets = _route(mb, start, s0 + v0 * dt * n_steps * 1.5 + 10.0, rng)
    stop_s = None
    for lid, off in offsets:
        if lid in red_lanes and off + stops[lid] > s0 + 1.0:
            stop_s = off + stops[lid]
            break
    s, v = _integrate_speed(v0, accel, n_steps, dt, stop_s, s0)
    if cfg.noise_speed > 0:
        drift = np.cumsum(rng.normal(0.0, cfg.noise_speed * dt, n_steps))
        s = s + drift
    pos, tangent = _sample_along(path, s)
    if lateral:
        pos = pos + lateral * np.column_stack([tangent[:, 1], -tangent[:, 0]])
    return _states_from_path(pos, tangent, v)


def _pedestrian(mb, crosswalk_ids, cfg, rng, n_steps, dt):
    cid = crosswalk_ids[int(rng.integers(0, len(crosswalk_ids)))]
    ring = mb.elements[cid]["points"][:-1]
    edges = np.diff(np.vstack([ring, ring[:1]]), axis=0)
    longest = int(np.argmax(np.linalg.norm(edges, axis=1)))
    axis = edges[longest] / np.linalg.norm(edges[longest])
    center = ring.mean(axis=0)
    if rng.random() < 0.5:
        axis = -axis
    length = np.linalg.norm(edges[longest])
    speed = float(rng.uniform(1.0, 1.6))
    start = center - axis * float(rng.uniform(0.0, 0.45)) * length
    t = np.arange(n_steps) * dt
    pos = start + np.outer(t * speed, axis)
    tangent = np.tile(axis, (n_steps, 1))
    return _states_from_path(pos, tangent, np.full(n_steps, speed))


def generate_synthetic(seed: int, cfg: GeneratorConfig | None = None) -> Scene:
    """Build a scene; identical ``(seed, cfg)`` always yield identical scenes."""
    cfg = cfg or GeneratorConfig()
    rng = np.random.default_rng([int(seed), TEMPLATES.index(cfg.template)])
    n_steps = cfg.l_obs + cfg.t_future
    dt = 1.0 / cfg.frequency_hz
    builder = {"straight": _straight_map, "intersection": _intersection_map,
               "roundabout": _roundabout_map}[cfg.template]
    mb, crosswalks, red_lanes, stops = builder(cfg, rng, n_steps)
    lanes = [mid for mid, e in mb.elements.items() if e["kind"] == "lane"]
    if not lanes and (cfg.n_vehicles or cfg.n_cyclists):
        raise ValueError("lane-following agents requested but the map has no lanes")
    if cfg.template == "intersection":
        spawn = [mid for mid in lanes if mid.startswith("in_")]
    elif cfg.template == "roundabout":
        spawn = [mid for mid in lanes if mid.startswith("entry_") or mid.startswith("ring_")]
    else:
        spawn = [mid for mid in lanes if mid.startswith("lane_0_") or mid.startswith("lane_1_")] or lanes

    kinds = (["vehicle"] * cfg.n_vehicles + ["pedestrian"] * cfg.n_pedestrians
             + ["cyclist"] * cfg.n_cyclists)
    agents = []
    for i, kind in enumerate(kinds):
        if kind == "pedestrian":
            states = _pedestrian(mb, crosswalks, cfg, rng, n_steps, dt)
        else:
            lateral = 0.8 if kind == "cyclist" else 0.0
            states = _lane_agent(mb, spawn, kind, cfg, rng, n_steps, dt, red_lanes, stops, lateral)
        if cfg.noise_pos > 0:
            states[:, :2] += rng.normal(0.0, cfg.noise_pos, (n_steps, 2))
        if cfg.missing_prob > 0:
            missing = rng.random(n_steps) < cfg.missing_prob
            missing[cfg.l_obs - 1] = False
            states[missing, :5] = 0.0
            states[missing, 5] = 0.0
        agents.append(AgentTrack(f"agent_{i:03d}", kind, states, _bbox(kind, rng),
                                 is_target=kind in cfg.target_types))
    if agents and not any(a.is_target for a in agents):
        agents[0] = AgentTrack(agents[0].id, agents[0].agent_type, agents[0].states, agents[0].bbox, True)
    return Scene(f"synthetic-{cfg.template}-{int(seed)}", tuple(agents), mb.build(),
                 cfg.frequency_hz, cfg.l_obs, cfg.t_future)
