"""Marginal and joint multi-modal forecasting metrics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

MISS_THRESHOLD = 2.0


def _masked_errors(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no valid future step")
    d = pred - gt[None]
    err = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])  # (K, T)
    return err, mask


def _exact_mean(rows: np.ndarray) -> np.ndarray:
    # correctly rounded sums make the result independent of summation order
    return np.array([math.fsum(r) / len(r) for r in rows])


def _last_valid(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[-1])


def ade_per_mode(pred, gt, mask=None) -> np.ndarray:
    err, mask = _masked_errors(pred, gt, mask)
    return _exact_mean(err[:, mask])


def fde_per_mode(pred, gt, mask=None) -> np.ndarray:
    err, mask = _masked_errors(pred, gt, mask)
    return err[:, _last_valid(mask)]


def min_ade(pred, gt, mask=None) -> float:
    """Lowest mean displacement over modes; ``pred`` (K, T, 2), ``gt`` (T, 2)."""
    return float(ade_per_mode(pred, gt, mask).min())


def min_fde(pred, gt, mask=None) -> float:
    """Lowest displacement at the last valid step over modes."""
    return float(fde_per_mode(pred, gt, mask).min())


def is_miss(pred, gt, mask=None, threshold: float = MISS_THRESHOLD) -> int:
    """1 when every mode ends more than ``threshold`` metres away (strict)."""
    return int(min_fde(pred, gt, mask) > threshold)


def miss_rate(preds, gts, masks=None, threshold: float = MISS_THRESHOLD) -> float:
    masks = [None] * len(preds) if masks is None else masks
    return float(np.mean([is_miss(p, g, m, threshold) for p, g, m in zip(preds, gts, masks)]))


def joint_metrics(preds, gts, masks=None, threshold: float = MISS_THRESHOLD) -> tuple[float, float, float]:
    """(minSADE, minSFDE, SMR) with one mode index shared by every agent of the scene."""
    masks = [None] * len(preds) if masks is None else masks
    ade = np.stack([ade_per_mode(p, g, m) for p, g, m in zip(preds, gts, masks)])  # (N, K)
    fde = np.stack([fde_per_mode(p, g, m) for p, g, m in zip(preds, gts, masks)])
    miss = (fde > threshold).any(axis=0)
    return float(_exact_mean(ade.T).min()), float(_exact_mean(fde.T).min()), float(miss.min())


@dataclass
class AgentResult:
    scene_id: str
    agent_id: str
    agent_type: str
    min_ade: float
    min_fde: float
    miss: int


@dataclass
class MetricReport:
    min_ade: float = float("nan")
    min_fde: float = float("nan")
    miss_rate: float = float("nan")
    joint_min_sade: float = float("nan")
    joint_min_sfde: float = float("nan")
    joint_smr: float = float("nan")
    n_agents: int = 0
    n_scenes: int = 0
    excluded: list = field(default_factory=list)
    by_type: dict = field(default_factory=dict)
    agents: list = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("agents")
        return d

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scene_id", "agent_id", "type", "min_ade", "min_fde", "miss"])
        for a in self.agents:
            w.writerow([a.scene_id, a.agent_id, a.agent_type, f"{a.min_ade:.6f}", f"{a.min_fde:.6f}", a.miss])
        w.writerow(["ALL", "", "", f"{self.min_ade:.6f}", f"{self.min_fde:.6f}", f"{self.miss_rate:.6f}"])
        return buf.getvalue()


def evaluate(entries, threshold: float = MISS_THRESHOLD) -> MetricReport:
    """Aggregate metrics over ``(scene_id, agent_id, agent_type, pred, gt, mask)`` tuples.

    Agents without a valid future step are listed in ``excluded``.
    """
    rep = MetricReport()
    scenes: dict[str, list] = {}
    for scene_id, agent_id, agent_type, pred, gt, mask in entries:
        mask = np.ones(len(gt), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if not mask.any():
            rep.excluded.append(f"{scene_id}/{agent_id}")
            continue
        fde = min_fde(pred, gt, mask)
        rep.agents.append(AgentResult(scene_id, agent_id, agent_type, min_ade(pred, gt, mask), fde,
                                      int(fde > threshold)))
        scenes.setdefault(scene_id, []).append((pred, gt, mask))
    if not rep.agents:
        return rep
    rep.n_agents, rep.n_scenes = len(rep.agents), len(scenes)
    rep.min_ade = float(np.mean([a.min_ade for a in rep.agents]))
    rep.min_fde = float(np.mean([a.min_fde for a in rep.agents]))
    rep.miss_rate = float(np.mean([a.miss for a in rep.agents]))
    joint = np.array([joint_metrics(*zip(*items), threshold=threshold) for items in scenes.values()])
    rep.joint_min_sade, rep.joint_min_sfde, rep.joint_smr = (float(v) for v in joint.mean(axis=0))
    for t in sorted({a.agent_type for a in rep.agents}):
        sel = [a for a in rep.agents if a.agent_type == t]
        rep.by_type[t] = {"min_ade": float(np.mean([a.min_ade for a in sel])),
                          "min_fde": float(np.mean([a.min_fde for a in sel])),
                          "miss_rate": float(np.mean([a.miss for a in sel])),
                          "n": len(sel)}
    return rep
