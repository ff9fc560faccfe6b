"""Rigid motions of whole scenes (used to test frame invariance)."""
from __future__ import annotations

from dataclasses import replace

from ..geometry import transform_scene_coords, wrap_angle
from .schema import HEADING, VX, VY, X, Y, Scene


def transform_scene(scene: Scene, rotation: float, translation) -> Scene:
    """Rotate every coordinate, velocity and heading by ``rotation`` then translate."""
    agents = []
    for a in scene.agents:
        s = a.states.copy()
        s[:, [X, Y]] = transform_scene_coords(a.states[:, [X, Y]], rotation, translation)
        s[:, [VX, VY]] = transform_scene_coords(a.states[:, [VX, VY]], rotation, (0.0, 0.0))
        s[:, HEADING] = wrap_angle(a.states[:, HEADING] + rotation)
        agents.append(replace(a, states=s))
    elems = [replace(m, points=transform_scene_coords(m.points, rotation, translation)) for m in scene.map]
    return replace(scene, agents=tuple(agents), map=tuple(elems))

def permute_agents(scene: Scene, order) -> Scene:
    agents = list(scene.agents)
    return replace(scene, agents=tuple(agents[i] for i in order))

def retarget(scene: Scene, target_ids) -> Scene:
    wanted = set(target_ids)
    return replace(scene, agents=tuple(replace(a, is_target=a.id in wanted) for a in scene.agents))


__all__ = ["transform_scene", "permute_agents", "retarget"]
