"""Training loop: AdamW, warmup + linear decay, agent drop, checkpoints, logs."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import checkpoint
from .autodiff.params import ParamTable
from .autodiff.tensor import no_grad, precision
from .batch import collate, featurize
from .config import ModelConfig
from .metrics import MetricReport, evaluate
from .model import forward, init_params, loss
from .scene.preprocess import preprocess
from .scene.schema import Scene

CHECKPOINT_NAME = "model.ckpt"
BEST_NAME = "best.ckpt"
META_SUFFIX = ".json"
LOG_NAME = "train_log.jsonl"
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class NumericError(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 30
    warmup_epochs: float = 1.0
    agent_drop_p: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    precision: str = "float32"
    max_steps: int | None = None  # stop early (and schedule to this many steps)
    eval_batch_size: int = 32
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.agent_drop_p < 1:
            raise ValueError("agent_drop_p must be in [0, 1)")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.workers != 1:
            raise ValueError("only single-worker training is supported")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, total_steps: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear ramp 0 -> lr over the warmup steps, then linear decay to 0 at ``total_steps``."""
    warmup = min(int(round(cfg.warmup_epochs * steps_per_epoch)), total_steps)
    if step < warmup:
        return cfg.lr * step / warmup
    if total_steps <= warmup:
        return cfg.lr
    return cfg.lr * max(total_steps - step, 0) / (total_steps - warmup)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: ParamTable, state: AdamState, cfg: TrainConfig, lr: float) -> None:
    """Decoupled-weight-decay Adam update of every parameter with a gradient."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p.data = (p.data * (1 - lr * cfg.weight_decay) - lr * update).astype(p.dtype)


def agent_drop(scene: Scene, p: float, rng: np.random.Generator) -> Scene:
    """Remove each non-target agent independently with probability ``p``."""
    if p <= 0:
        return scene
    ordered = sorted(scene.agents, key=lambda a: a.id)
    draws = rng.random(len(ordered))
    drop = {a.id for a, u in zip(ordered, draws) if not a.is_target and u < p}
    return scene.with_agents([a for a in scene.agents if a.id not in drop])


# -- checkpoints ----------------------------------------------------------------

def checkpoint_entries(params: ParamTable, opt: AdamState | None = None) -> dict[str, np.ndarray]:
    entries = params.state_dict()
    if opt is not None:
        entries["optim.step"] = np.array(opt.step, dtype=np.float64)
        for name in params.names():
            if name in opt.m:
                entries[f"optim.m.{name}"] = opt.m[name]
                entries[f"optim.v.{name}"] = opt.v[name]
    return entries


def save_checkpoint(path, params: ParamTable, model_cfg: ModelConfig, train_cfg: TrainConfig | None = None,
                    opt: AdamState | None = None, extra: dict | None = None) -> None:
    """Write the binary tensor file plus a JSON sidecar with the configs."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    checkpoint.save(tmp, checkpoint_entries(params, opt))
    os.replace(tmp, path)
    meta = {"format_version": checkpoint.FORMAT_VERSION, "model_config": model_cfg.to_dict(),
            "train_config": None if train_cfg is None else train_cfg.to_dict()}
    if train_cfg is not None:
        meta["optimizer"] = {"name": "adamw", "beta1": train_cfg.beta1, "beta2": train_cfg.beta2,
                             "eps": train_cfg.adam_eps, "weight_decay": train_cfg.weight_decay}
    meta.update(extra or {})
    Path(str(path) + META_SUFFIX).write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_checkpoint(path, dtype=None):
    """Return (params, model_cfg, meta, optimizer state or None)."""
    entries = checkpoint.load(path)
    meta_path = Path(str(path) + META_SUFFIX)
    if not meta_path.exists():
        raise checkpoint.CheckpointError(f"missing metadata sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    model_cfg = ModelConfig.from_dict(meta["model_config"])
    params = init_params(model_cfg, dtype=dtype)
    params.load_state_dict({k: v for k, v in entries.items() if not k.startswith("optim.")})
    opt = None
    if "optim.step" in entries:
        opt = AdamState(step=int(entries["optim.step"]))
        for name, p in params.items():
            if f"optim.m.{name}" in entries:
                opt.m[name] = entries[f"optim.m.{name}"].astype(p.dtype)
                opt.v[name] = entries[f"optim.v.{name}"].astype(p.dtype)
    return params, model_cfg, meta, opt


# -- evaluation ------------------------------------------------------------------

def predict_scenes(params: ParamTable, cfg: ModelConfig, scenes, batch_size: int = 32):
    """Yield (sample, Prediction) per scene; batches are only for speed."""
    samples = [featurize(preprocess(s), cfg) for s in scenes]
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            pred = forward(params, cfg, collate(chunk, cfg))
            off = 0
            for s in chunk:
                a = s.graph.n_agents
                yield s, _slice_prediction(pred, off, off + a)
                off += a


def _slice_prediction(pred, lo, hi):
    from .decoder import Prediction
    return Prediction(pred.trajectories[lo:hi], pred.confidences[lo:hi])


def evaluate_scenes(params: ParamTable, cfg: ModelConfig, scenes, batch_size: int = 32,
                    targets_only: bool = True) -> MetricReport:
    entries = []
    for s, pred in predict_scenes(params, cfg, scenes, batch_size):
        for i, aid in enumerate(s.agent_ids):
            if targets_only and not s.is_target[i]:
                continue
            entries.append((s.scene_id, aid, s.agent_types[i], pred.trajectories[i], s.gt_future[i],
                            s.loss_mask[i]))
    return evaluate(entries)


# -- loop ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ParamTable
    history: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    best_epoch: int | None = None
    steps: int = 0


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def train(train_scenes, model_cfg: ModelConfig, cfg: TrainConfig, val_scenes=None, out_dir=None,
          resume: str | os.PathLike | None = None, log=None) -> TrainResult:
    """Seeded mini-batch training.

    Checkpoints are written at the end of every epoch (``model.ckpt``) and for
    the epoch with the lowest validation minADE (``best.ckpt``). A non-finite
    loss raises :class:`NumericError` and leaves the previous checkpoint alone.
    """
    train_scenes = list(train_scenes)
    if not train_scenes:
        raise ValueError("no training scenes")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    with precision(cfg.dtype):
        return _train(train_scenes, model_cfg, cfg, val_scenes, out, resume, log)


def _train(train_scenes, model_cfg, cfg, val_scenes, out, resume, log):
    steps_per_epoch = math.ceil(len(train_scenes) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    start_epoch, best = 0, (math.inf, None)
    if resume is not None:
        params, saved_cfg, meta, opt = load_checkpoint(resume, dtype=cfg.dtype)
        if saved_cfg.to_dict() != model_cfg.to_dict():
            raise ValueError("resume checkpoint was trained with a different model config")
        opt = opt or AdamState()
        start_epoch = int(meta.get("epoch", -1)) + 1
        best = (meta.get("best_min_ade") or math.inf, meta.get("best_epoch"))
    else:
        params, opt = init_params(model_cfg, dtype=cfg.dtype), AdamState()

    cached = None
    if cfg.agent_drop_p == 0:
        cached = [featurize(preprocess(s), model_cfg) for s in train_scenes]
    log_fh = open(out / LOG_NAME, "a" if resume else "w") if out is not None else None
    result = TrainResult(params, best_epoch=best[1], steps=opt.step)

    def emit(record):
        line = _json_line(record)
        if log_fh is not None:
            log_fh.write(line + "\n")
            log_fh.flush()
        if log is not None:
            log(record)

    try:
        for epoch in range(start_epoch, cfg.epochs):
            if opt.step >= total:
                break
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(train_scenes))
            for b0 in range(0, len(order), cfg.batch_size):
                if opt.step >= total:
                    break
                idx = order[b0:b0 + cfg.batch_size]
                if cached is not None:
                    samples = [cached[i] for i in idx]
                else:
                    samples = [featurize(preprocess(agent_drop(train_scenes[i], cfg.agent_drop_p, rng)), model_cfg)
                               for i in idx]
                batch = collate(samples, model_cfg)
                lr = lr_at(opt.step, total, cfg, steps_per_epoch)
                params.zero_grad()
                lb = loss(params, model_cfg, batch)
                value = float(lb.total.data)
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at step {opt.step}")
                lb.total.backward()
                for name, p in params.items():
                    if p.grad is not None and not np.isfinite(p.grad).all():
                        raise NumericError(f"non-finite gradient for {name} at step {opt.step}")
                optimizer_step(params, opt, cfg, lr)
                record = {"step": opt.step, "epoch": epoch, "lr": lr, "loss": value, "reg": lb.reg, "cls": lb.cls}
                result.history.append(record)
                emit(record)
            result.steps = opt.step
            extra = {"epoch": epoch, "step": opt.step}
            if val_scenes:
                rep = evaluate_scenes(params, model_cfg, val_scenes, cfg.eval_batch_size)
                vrec = {"epoch": epoch, "min_ade": rep.min_ade, "min_fde": rep.min_fde, "mr": rep.miss_rate}
                result.validation.append(vrec)
                emit(vrec)
                if rep.min_ade < best[0]:
                    best = (rep.min_ade, epoch)
                    result.best_epoch = epoch
                    if out is not None:
                        save_checkpoint(out / BEST_NAME, params, model_cfg, cfg, None,
                                        {**extra, "min_ade": rep.min_ade})
            extra.update({"best_min_ade": best[0] if math.isfinite(best[0]) else None, "best_epoch": best[1]})
            if out is not None:
                save_checkpoint(out / CHECKPOINT_NAME, params, model_cfg, cfg, opt, extra)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
