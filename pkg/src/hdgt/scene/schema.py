"""Scene data model and its canonical JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
MAP_KINDS = ("lane", "road_line", "crosswalk", "stop_sign", "speed_bump", "curb", "traffic_light")
POLYGON_KINDS = ("crosswalk", "speed_bump")
TOPOLOGY_KEYS = ("left", "right", "entry", "exit")

LIGHT_GREEN, LIGHT_YELLOW, LIGHT_RED = 0, 1, 2
LIGHT_STATES = (LIGHT_GREEN, LIGHT_YELLOW, LIGHT_RED)

# Column layout of AgentTrack.states.
X, Y, VX, VY, HEADING, VALID = range(6)

FLOAT_DIGITS = 9


class SceneValidationError(ValueError):
    """Raised when a scene document violates the schema; carries a JSON path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True, eq=False)
class AgentTrack:
    id: str
    agent_type: str
    states: np.ndarray  # (L, 6): x, y, vx, vy, heading, valid
    bbox: tuple[float, float, float]
    is_target: bool = False

    @property
    def valid(self) -> np.ndarray:
        return self.states[:, VALID] > 0.5


@dataclass(frozen=True, eq=False)
class MapPolyline:
    id: str
    kind: str
    points: np.ndarray  # (P, 2)
    subtype: int = 0
    left: tuple[str, ...] = ()
    right: tuple[str, ...] = ()
    entry: tuple[str, ...] = ()
    exit: tuple[str, ...] = ()
    controlled_lanes: tuple[str, ...] = ()
    light_states: tuple[int, ...] = ()

    @property
    def is_polygon(self) -> bool:
        return self.kind in POLYGON_KINDS

    @property
    def is_lane(self) -> bool:
        return self.kind == "lane"


@dataclass(frozen=True, eq=False)
class Scene:
    id: str
    agents: tuple[AgentTrack, ...]
    map: tuple[MapPolyline, ...]
    frequency_hz: float = 10.0
    l_obs: int = 11
    t_future: int = 30
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def horizon_s(self) -> float:
        return self.t_future / self.frequency_hz

    @property
    def targets(self) -> list[AgentTrack]:
        return [a for a in self.agents if a.is_target]

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def lanes(self) -> list[MapPolyline]:
        return [m for m in self.map if m.is_lane]

    def with_agents(self, agents) -> "Scene":
        return replace(self, agents=tuple(agents))


# -- loading -----------------------------------------------------------------

def _require(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise SceneValidationError(f"{path}.{key}", "missing field")
    value = obj[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SceneValidationError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _id_list(obj: dict, key: str, path: str) -> tuple[str, ...]:
    values = obj.get(key, [])
    if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
        raise SceneValidationError(f"{path}.{key}", "expected array of string ids")
    return tuple(values)


def _float_matrix(rows, width: int, path: str) -> np.ndarray:
    if not isinstance(rows, list):
        raise SceneValidationError(path, "expected array")
    for i, row in enumerate(rows):
        if (not isinstance(row, list) or len(row) != width
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row)):
            raise SceneValidationError(f"{path}[{i}]", f"expected array of {width} numbers")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width)


def scene_from_dict(doc: dict[str, Any]) -> Scene:
    path = "$"
    if not isinstance(doc, dict):
        raise SceneValidationError(path, "expected object")
    scene_id = _require(doc, "id", str, path)
    freq = float(_require(doc, "frequency_hz", float, path))
    l_obs = _require(doc, "l_obs", int, path)
    t_future = _require(doc, "t_future", int, path)
    if freq <= 0 or l_obs < 1 or t_future < 0:
        raise SceneValidationError(path, "frequency_hz, l_obs must be positive and t_future >= 0")
    diagnostics: list[str] = []

    agents = []
    seen_agents: set[str] = set()
    track_len = None
    for i, a in enumerate(_require(doc, "agents", list, path)):
        apath = f"$.agents[{i}]"
        if not isinstance(a, dict):
            raise SceneValidationError(apath, "expected object")
        aid = _require(a, "id", str, apath)
        if aid in seen_agents:
            raise SceneValidationError(f"{apath}.id", f"duplicate agent id {aid!r}")
        seen_agents.add(aid)
        atype = _require(a, "type", str, apath)
        if atype not in AGENT_TYPES:
            raise SceneValidationError(f"{apath}.type", f"unknown agent type {atype!r}")
        is_target = _require(a, "is_target", bool, apath)
        bbox = _float_matrix([_require(a, "bbox", list, apath)], 3, f"{apath}.bbox")[0]
        states = _float_matrix(_require(a, "states", list, apath), 6, f"{apath}.states")
        if not np.all(np.isin(states[:, VALID], (0.0, 1.0))):
            raise SceneValidationError(f"{apath}.states", "valid flag must be 0 or 1")
        if len(states) not in (l_obs, l_obs + t_future):
            raise SceneValidationError(f"{apath}.states", f"track length {len(states)} is neither l_obs nor l_obs + t_future")
        if track_len is not None and len(states) != track_len:
            raise SceneValidationError(f"{apath}.states", f"inconsistent track length {len(states)} != {track_len}")
        track_len = len(states)
        agents.append(AgentTrack(aid, atype, states, tuple(float(v) for v in bbox), is_target))
    if not any(a.is_target for a in agents):
        raise SceneValidationError("$.agents", "scene needs at least one target agent")

    elements = []
    seen_map: set[str] = set()
    n_steps = track_len or l_obs
    for i, m in enumerate(_require(doc, "map", list, path)):
        mpath = f"$.map[{i}]"
        if not isinstance(m, dict):
            raise SceneValidationError(mpath, "expected object")
        mid = _require(m, "id", str, mpath)
        if mid in seen_map:
            raise SceneValidationError(f"{mpath}.id", f"duplicate map id {mid!r}")
        seen_map.add(mid)
        kind = _require(m, "kind", str, mpath)
        if kind not in MAP_KINDS:
            raise SceneValidationError(f"{mpath}.kind", f"unknown map kind {kind!r}")
        subtype = _require(m, "subtype", int, mpath)
        points = _float_matrix(_require(m, "points", list, mpath), 2, f"{mpath}.points")
        if len(points) < 2:
            raise SceneValidationError(f"{mpath}.points", "need at least 2 points")
        if kind in POLYGON_KINDS and not np.array_equal(points[0], points[-1]):
            raise SceneValidationError(f"{mpath}.points", f"{kind} must be a closed ring")
        topo = {k: _id_list(m, k, mpath) for k in TOPOLOGY_KEYS}
        if kind != "lane" and any(topo.values()):
            raise SceneValidationError(mpath, "only lanes carry left/right/entry/exit topology")
        controlled = _id_list(m, "controlled_lanes", mpath)
        lights = m.get("light_states", [])
        if not isinstance(lights, list) or not all(isinstance(v, int) and v in LIGHT_STATES for v in lights):
            raise SceneValidationError(f"{mpath}.light_states", "expected array of ints in {0,1,2}")
        if kind == "traffic_light" and len(lights) < n_steps:
            diagnostics.append(f"{mpath}: {n_steps - len(lights)} missing light states defaulted to green")
            lights = list(lights) + [LIGHT_GREEN] * (n_steps - len(lights))
        elements.append(MapPolyline(mid, kind, points, subtype, controlled_lanes=controlled,
                                    light_states=tuple(lights), **topo))

    lane_ids = {m.id for m in elements if m.kind == "lane"}
    for i, m in enumerate(elements):
        for key in TOPOLOGY_KEYS + ("controlled_lanes",):
            for ref in getattr(m, key):
                if ref not in lane_ids:
                    raise SceneValidationError(f"$.map[{i}].{key}", f"dangling lane reference {ref!r}")

    return Scene(scene_id, tuple(agents), tuple(elements), freq, l_obs, t_future, tuple(diagnostics))


def load_scene(data) -> Scene:
    """Parse and validate a scene from JSON text/bytes."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SceneValidationError("$", f"invalid JSON: {exc}") from exc
    return scene_from_dict(doc)


def load_scene_file(path) -> Scene:
    with open(path, "rb") as fh:
        return load_scene(fh.read())


# -- saving ------------------------------------------------------------------

def _fmt(value: float) -> float:
    out = float(f"{float(value):.{FLOAT_DIGITS}g}")
    return 0.0 if out == 0 else out


def scene_to_dict(scene: Scene) -> dict[str, Any]:
    agents = []
    for a in scene.agents:
        states = [[_fmt(v) for v in row[:VALID]] + [int(round(row[VALID]))] for row in a.states]
        agents.append({
            "id": a.id,
            "type": a.agent_type,
            "is_target": bool(a.is_target),
            "bbox": [_fmt(v) for v in a.bbox],
            "states": states,
        })
    elements = []
    for m in scene.map:
        doc = {
            "id": m.id,
            "kind": m.kind,
            "subtype": int(m.subtype),
            "points": [[_fmt(x), _fmt(y)] for x, y in m.points],
        }
        if m.kind == "lane":
            for key in TOPOLOGY_KEYS:
                doc[key] = list(getattr(m, key))
        if m.controlled_lanes:
            doc["controlled_lanes"] = list(m.controlled_lanes)
        if m.light_states:
            doc["light_states"] = [int(v) for v in m.light_states]
        elements.append(doc)
    return {
        "id": scene.id,
        "frequency_hz": _fmt(scene.frequency_hz),
        "l_obs": int(scene.l_obs),
        "t_future": int(scene.t_future),
        "agents": agents,
        "map": elements,
    }


def dumps_canonical(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=1)


def save_scene(scene: Scene) -> bytes:
    """Canonical document: sorted keys, floats rounded to 9 significant digits."""
    return dumps_canonical(scene_to_dict(scene)).encode("utf-8")


def save_scene_file(scene: Scene, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_scene(scene))
