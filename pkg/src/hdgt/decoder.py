"""Per-agent-type regression/classification heads and the winner-take-all loss."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.params import ParamTable
from .autodiff.tensor import Tensor, as_tensor
from .config import ModelConfig
from .geometry import Pose2, to_global_point
from .nn import add_layer_norm, add_mlp, apply_layer_norm, apply_mlp
from .scene.schema import AGENT_TYPES


@dataclass
class Prediction:
    trajectories: np.ndarray  # (N, K, T, 2) metres, each agent's local frame
    confidences: np.ndarray  # (N, K) softmax
    logits: Tensor | None = None
    traj_tensor: Tensor | None = None


@dataclass
class LossBreakdown:
    total: Tensor
    reg: float
    cls: float
    winners: np.ndarray
    excluded: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"loss": float(self.total.data), "reg": self.reg, "cls": self.cls}


def init_head_params(p: ParamTable, cfg: ModelConfig) -> None:
    h, out = cfg.hidden, cfg.n_modes * cfg.t_future * 2
    hidden = [h] * (cfg.head_hidden_layers + 1)
    for t in AGENT_TYPES:
        add_layer_norm(p, f"head.{t}.ln", h)
        add_mlp(p, f"head.{t}.reg", hidden + [out])
        add_mlp(p, f"head.{t}.cls", hidden + [cfg.n_modes])


def predict(p: ParamTable, feats: Tensor, agent_types, cfg: ModelConfig) -> Prediction:
    """Run the type-specific heads on (N, h) features."""
    agent_types = list(agent_types)
    unknown = sorted(set(agent_types) - set(AGENT_TYPES))
    if unknown:
        raise ValueError(f"unknown agent type(s): {unknown}")
    n, kk, t = len(agent_types), cfg.n_modes, cfg.t_future
    types = np.array(agent_types, dtype=object)
    n_layers = cfg.head_hidden_layers + 1
    regs, logits, rows = [], [], []
    for at in AGENT_TYPES:
        idx = np.flatnonzero(types == at)
        if not len(idx):
            continue
        x = apply_layer_norm(p, f"head.{at}.ln", ops.take(feats, idx), cfg.ln_eps)
        regs.append(apply_mlp(p, f"head.{at}.reg", x, n_layers))
        logits.append(apply_mlp(p, f"head.{at}.cls", x, n_layers))
        rows.append(idx)
    if n == 0:
        return Prediction(np.zeros((0, kk, t, 2)), np.zeros((0, kk)))
    reg = ops.mul(ops.reshape(ops.scatter_rows(regs, rows, n), (n, kk, t, 2)), 1.0 / cfg.coord_scale)
    logit = ops.scatter_rows(logits, rows, n)
    conf = ops.softmax(logit, axis=-1).data
    return Prediction(reg.data.astype(np.float64), conf.astype(np.float64), logit, reg)


def smooth_l1(x1, x2):
    """0.5 d^2 if |d| < 1 else |d| - 0.5 (elementwise, numpy)."""
    d = np.abs(np.asarray(x1, dtype=np.float64) - np.asarray(x2, dtype=np.float64))
    return np.where(d < 1, 0.5 * d * d, d - 0.5)


def mode_costs(modes: np.ndarray, gt: np.ndarray, mask: np.ndarray, criterion: str = "smooth_l1") -> np.ndarray:
    """(..., K) per-mode selection cost over unmasked steps.

    ``modes`` is (..., K, T, 2), ``gt`` (..., T, 2), ``mask`` (..., T).
    """
    m = mask.astype(np.float64)[..., None, :]
    if criterion == "smooth_l1":
        per_step = smooth_l1(modes, gt[..., None, :, :]).sum(axis=-1)
        denom = 2.0 * m.sum(axis=-1)
    elif criterion == "euclidean":
        per_step = np.linalg.norm(modes - gt[..., None, :, :], axis=-1)
        denom = m.sum(axis=-1)
    else:
        raise ValueError(f"unknown winner criterion {criterion!r}")
    return (per_step * m).sum(axis=-1) / np.maximum(denom, 1e-12)


def winner_index(modes: np.ndarray, gt: np.ndarray, mask: np.ndarray, criterion: str = "smooth_l1"):
    """Index of the lowest-cost mode; ties go to the lowest index (np.argmin)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("winner_index needs at least one unmasked future step")
    return np.argmin(mode_costs(modes, gt, mask, criterion), axis=-1)


def mtp_loss(pred: Prediction, gt: np.ndarray, mask: np.ndarray, weights: np.ndarray | None = None,
             lambda_cls: float = 0.1, criterion: str = "smooth_l1") -> LossBreakdown:
    """lambda * cross-entropy toward the winner + smooth-L1 regression of the winner.

    ``weights`` (N,) sets each agent's share of the total; by default every
    supervised agent gets 1/N_supervised. Agents with weight 0 or no valid
    future step are left out; the latter are listed in ``excluded``.
    """
    n = pred.trajectories.shape[0]
    mask = np.asarray(mask, dtype=bool)
    has_future = mask.any(axis=1) if n else np.zeros(0, dtype=bool)
    excluded = [int(i) for i in np.flatnonzero(~has_future)]
    if weights is None:
        weights = has_future / max(int(has_future.sum()), 1)
    weights = np.where(has_future, np.asarray(weights, dtype=np.float64), 0.0)
    rows = np.flatnonzero(weights > 0)
    dtype = pred.traj_tensor.dtype
    if not len(rows):
        zero = ops.mul(ops.sum(pred.logits), 0.0)
        return LossBreakdown(zero, 0.0, 0.0, np.zeros(0, dtype=np.int64), excluded)

    winners = winner_index(pred.trajectories[rows], gt[rows], mask[rows], criterion)
    chosen = ops.index(pred.traj_tensor, (rows, winners))  # (R, T, 2)
    m = mask[rows].astype(np.float64)
    w = weights[rows]
    coef = (w / (2.0 * m.sum(axis=1)))[:, None] * m  # (R, T)
    per = ops.smooth_l1(chosen, as_tensor(gt[rows].astype(dtype)))
    reg = ops.sum(ops.mul(per, as_tensor(np.repeat(coef[:, :, None], 2, axis=2).astype(dtype))))

    logp = ops.log_softmax(ops.take(pred.logits, rows), axis=-1)
    onehot = np.zeros(logp.shape)
    onehot[np.arange(len(rows)), winners] = -w
    cls = ops.sum(ops.mul(logp, as_tensor(onehot.astype(dtype))))
    total = ops.add(ops.mul(cls, lambda_cls), reg)
    return LossBreakdown(total, float(reg.data), float(cls.data), winners, excluded)


def prediction_record(pred: Prediction, agent_ids, frames: np.ndarray) -> dict:
    """{agent_id: {modes, conf, modes_global}} for one scene."""
    out = {}
    for i, aid in enumerate(agent_ids):
        pose = Pose2(*frames[i])
        local = pred.trajectories[i]
        glob = np.stack([to_global_point(m, pose) for m in local])
        out[aid] = {
            "modes": np.round(local, 6).tolist(),
            "modes_global": np.round(glob, 6).tolist(),
            "conf": np.round(pred.confidences[i], 8).tolist(),
            "ref_pose": [float(v) for v in frames[i]],
        }
    return out


def dumps_prediction(scene_id: str, record: dict, config: dict | None = None) -> str:
    doc = {"format_version": 1, "scene_id": scene_id, "agents": record}
    if config is not None:
        doc["config"] = config
    return json.dumps(doc, sort_keys=True, indent=1)
