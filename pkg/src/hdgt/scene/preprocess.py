"""Track cleanup before encoding: fill observed gaps, mask missing futures."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import wrap_angle
from .schema import HEADING, VALID, X, AgentTrack, Scene


@dataclass
class Preprocessed:
    scene: Scene
    loss_mask: dict[str, np.ndarray]  # agent id -> (t_future,) bool
    dropped: list[str] = field(default_factory=list)


def _fill_channel(t_valid: np.ndarray, values: np.ndarray, t_all: np.ndarray) -> np.ndarray:
    # np.interp holds the nearest valid value outside the valid range.
    return np.interp(t_all, t_valid, values)


def fill_observed(states: np.ndarray, l_obs: int) -> np.ndarray:
    """Linearly interpolate invalid observed steps; returns a copy.

    Valid rows and the future horizon are left untouched.  The valid flag of
    filled rows stays 0 so the encoder can still see the gap.
    """
    out = states.copy()
    obs = out[:l_obs]
    valid = obs[:, VALID] > 0.5
    if valid.all() or not valid.any():
        return out
    t_all = np.arange(l_obs, dtype=np.float64)
    t_valid = t_all[valid]
    missing = ~valid
    for c in range(X, HEADING):
        obs[missing, c] = _fill_channel(t_valid, obs[valid, c], t_all)[missing]
    heading = np.unwrap(obs[valid, HEADING])
    obs[missing, HEADING] = wrap_angle(_fill_channel(t_valid, heading, t_all)[missing])
    return out


def preprocess(scene: Scene) -> Preprocessed:
    """Fill observed gaps, build per-agent future loss masks, drop unobserved agents."""
    agents: list[AgentTrack] = []
    masks: dict[str, np.ndarray] = {}
    dropped: list[str] = []
    diagnostics = list(scene.diagnostics)
    for a in scene.agents:
        if not (a.states[: scene.l_obs, VALID] > 0.5).any():
            dropped.append(a.id)
            diagnostics.append(f"agent {a.id!r} dropped: no valid observed step")
            continue
        states = fill_observed(a.states, scene.l_obs)
        agents.append(AgentTrack(a.id, a.agent_type, states, a.bbox, a.is_target))
        future = a.states[scene.l_obs:, VALID] > 0.5
        if len(future) == 0:
            future = np.zeros(scene.t_future, dtype=bool)
        masks[a.id] = future
    cleaned = Scene(scene.id, tuple(agents), scene.map, scene.frequency_hz, scene.l_obs,
                    scene.t_future, tuple(diagnostics))
    return Preprocessed(cleaned, masks, dropped)
