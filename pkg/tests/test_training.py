import json
import math

import numpy as np
import pytest

from hdgt.autodiff import ParamTable
from hdgt.config import ModelConfig
from hdgt.scene import AgentTrack
from hdgt.training import (
    AdamState,
    NumericError,
    TrainConfig,
    agent_drop,
    evaluate_scenes,
    load_checkpoint,
    lr_at,
    optimizer_step,
    save_checkpoint,
    train,
)

from conftest import make_scene, mixed_scenes

TINY = ModelConfig(hidden=16, n_heads=2, n_layers=1, n_modes=2, t_future=30)


def test_lr_schedule():
    cfg = TrainConfig(lr=5e-4, epochs=10, warmup_epochs=1)
    assert lr_at(0, 100, cfg, 10) == 0.0
    assert lr_at(5, 100, cfg, 10) == pytest.approx(2.5e-4)
    assert lr_at(10, 100, cfg, 10) == 5e-4
    assert lr_at(55, 100, cfg, 10) == pytest.approx(2.5e-4)
    assert lr_at(100, 100, cfg, 10) == 0.0


def _scalar_param(x0):
    p = ParamTable()
    p.zeros("x", (1,))
    p["x"].data[:] = x0
    return p


def test_adamw_hand_calculation():
    cfg = TrainConfig(weight_decay=0.1)
    p = _scalar_param(1.0)
    p["x"].grad = np.ones(1, np.float32)  # f(x) = x
    optimizer_step(p, AdamState(), cfg, lr=0.01)
    expected = 1.0 * (1 - 0.01 * 0.1) - 0.01 * 1.0 / (1.0 + 1e-8)
    assert float(p["x"].data[0]) == pytest.approx(expected, rel=1e-6)


def test_zero_gradient_zero_decay_keeps_params():
    p = _scalar_param(0.7)
    state = AdamState()
    for _ in range(3):
        p["x"].grad = np.zeros(1, np.float32)
        optimizer_step(p, state, TrainConfig(weight_decay=0.0), lr=0.1)
    assert float(p["x"].data[0]) == np.float32(0.7)
    assert state.step == 3


def test_decay_only_step_shrinks():
    p = _scalar_param(2.0)
    p["x"].grad = np.zeros(1, np.float32)
    optimizer_step(p, AdamState(), TrainConfig(weight_decay=0.5), lr=0.1)
    assert float(p["x"].data[0]) == pytest.approx(2.0 * (1 - 0.05))


def test_agent_drop():
    s = make_scene(0, n_vehicles=6, n_pedestrians=2, target_types=("pedestrian",))
    assert agent_drop(s, 0.0, np.random.default_rng(0)) is s
    kept = agent_drop(s, 0.999999, np.random.default_rng(0))
    assert [a.id for a in kept.agents] == [a.id for a in s.agents if a.is_target]
    a = agent_drop(s, 0.5, np.random.default_rng(5))
    b = agent_drop(s, 0.5, np.random.default_rng(5))
    assert [x.id for x in a.agents] == [x.id for x in b.agents]
    assert all(t.id in {x.id for x in a.agents} for t in s.targets)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(agent_drop_p=1.0)
    with pytest.raises(ValueError):
        TrainConfig(workers=4)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1.0})
    assert TrainConfig.from_dict(TrainConfig(lr=0.1).to_dict()) == TrainConfig(lr=0.1)


def test_smoke_training_loss_decreases(tmp_path):
    scenes = mixed_scenes(4)
    cfg = TrainConfig(lr=2e-3, batch_size=2, epochs=8, warmup_epochs=1, agent_drop_p=0.0)
    res = train(scenes, TINY, cfg, val_scenes=scenes[:2], out_dir=tmp_path)
    losses = [h["loss"] for h in res.history]
    assert len(losses) == 16
    assert np.mean(losses[-4:]) < np.mean(losses[:4])
    assert (tmp_path / "model.ckpt").exists() and (tmp_path / "best.ckpt").exists()
    log = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert sum("step" in r for r in log) == 16 and sum("min_ade" in r for r in log) == 8


class _Stop(Exception):
    pass


def test_resume_is_bitwise(tmp_path):
    scenes = mixed_scenes(4, start=20)
    cfg = TrainConfig(lr=1e-3, batch_size=2, epochs=4, agent_drop_p=0.3, seed=3)
    full = train(scenes, TINY, cfg, out_dir=tmp_path / "full")

    def stop_at_epoch_two(record):
        if record.get("epoch") == 2 and "step" in record:
            raise _Stop

    with pytest.raises(_Stop):
        train(scenes, TINY, cfg, out_dir=tmp_path / "cut", log=stop_at_epoch_two)
    resumed = train(scenes, TINY, cfg, out_dir=tmp_path / "cut", resume=tmp_path / "cut" / "model.ckpt")
    assert resumed.history == full.history[4:]
    assert (tmp_path / "cut" / "model.ckpt").read_bytes() == (tmp_path / "full" / "model.ckpt").read_bytes()


def test_checkpoint_round_trip_metrics(tmp_path):
    scenes = mixed_scenes(3, start=40)
    res = train(scenes, TINY, TrainConfig(batch_size=3, epochs=1, agent_drop_p=0.0))
    before = evaluate_scenes(res.params, TINY, scenes)
    save_checkpoint(tmp_path / "m.ckpt", res.params, TINY)
    params, cfg, meta, opt = load_checkpoint(tmp_path / "m.ckpt")
    after = evaluate_scenes(params, cfg, scenes)
    assert opt is None and meta["model_config"]["hidden"] == 16
    assert before.summary() == after.summary()


def test_missing_sidecar_is_an_error(tmp_path):
    from hdgt.autodiff.checkpoint import CheckpointError
    res = train(mixed_scenes(1), TINY, TrainConfig(batch_size=1, epochs=1, agent_drop_p=0.0))
    save_checkpoint(tmp_path / "m.ckpt", res.params, TINY)
    (tmp_path / "m.ckpt.json").unlink()
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    s = make_scene(0)
    bad = s.agents[0]
    states = bad.states.copy()
    states[:, 0] = math.nan
    poisoned = s.with_agents([AgentTrack(bad.id, bad.agent_type, states, bad.bbox, True)] + list(s.agents[1:]))
    with pytest.raises(NumericError):
        train([poisoned], TINY, TrainConfig(batch_size=1, epochs=1, agent_drop_p=0.0))


def test_same_seed_same_run():
    scenes = mixed_scenes(2, start=60)
    cfg = TrainConfig(batch_size=1, epochs=2, agent_drop_p=0.5, seed=9)
    a = train(scenes, TINY, cfg).history
    b = train(scenes, TINY, cfg).history
    assert a == b
