import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgt.metrics import (
    evaluate,
    is_miss,
    joint_metrics,
    min_ade,
    min_fde,
    miss_rate,
)

from oracles import joint_oracle, min_ade_oracle, min_fde_oracle, miss_oracle, random_instance


def test_hand_example_min_ade():
    pred = np.array([[[0, 0], [1, 1]], [[0, 1], [2, 2]]], float)
    gt = np.array([[0, 0], [1, 2]], float)
    assert min_ade(pred, gt) == 0.5


def test_exact_mode_is_zero(rng):
    gt = rng.normal(size=(5, 2))
    pred = rng.normal(size=(3, 5, 2))
    pred[1] = gt
    assert min_ade(pred, gt) == 0.0 and min_fde(pred, gt) == 0.0


def test_three_four_five():
    gt = np.zeros((3, 2))
    pred = np.zeros((1, 3, 2))
    pred[0, -1] = [3, 4]
    assert min_fde(pred, gt) == 5.0


def test_miss_threshold_is_strict():
    gt = np.zeros((2, 2))
    hit = np.zeros((2, 2, 2))
    hit[:, -1] = [2.0, 0.0]
    assert is_miss(hit, gt) == 0
    miss = np.zeros((2, 2, 2))
    miss[:, -1] = [2.1, 0.0]
    assert is_miss(miss, gt) == 1


def test_fde_uses_last_valid_step():
    gt = np.zeros((3, 2))
    pred = np.zeros((1, 3, 2))
    pred[0, 2] = [10, 0]
    pred[0, 1] = [1, 0]
    assert min_fde(pred, gt, np.array([True, True, False])) == 1.0


def test_no_valid_step_rejected():
    with pytest.raises(ValueError):
        min_ade(np.zeros((1, 2, 2)), np.zeros((2, 2)), np.zeros(2, bool))


def test_thousand_instances_match_oracle_exactly():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        pred, gt, mask = random_instance(rng)
        assert min_ade(pred, gt, mask) == min_ade_oracle(pred, gt, mask)
        assert min_fde(pred, gt, mask) == min_fde_oracle(pred, gt, mask)
        assert is_miss(pred, gt, mask) == miss_oracle(pred, gt, mask)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extra_worse_mode_never_helps(seed):
    rng = np.random.default_rng(seed)
    pred, gt, mask = random_instance(rng, k=3, t=8)
    worse = pred[:1] + 50.0
    assert min_ade(np.concatenate([pred, worse]), gt, mask) == min_ade(pred, gt, mask)
    better_or_equal = np.concatenate([pred, rng.normal(size=(1, 8, 2))])
    assert min_ade(better_or_equal, gt, mask) <= min_ade(pred, gt, mask)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fde_bounded_by_sum_of_errors(seed):
    rng = np.random.default_rng(seed)
    pred, gt, _ = random_instance(rng, k=4, t=10)
    assert min_fde(pred, gt) <= 10 * min_ade(pred, gt) + 1e-12


def test_joint_single_agent_equals_marginal(rng):
    pred, gt, mask = random_instance(rng)
    sade, sfde, smr = joint_metrics([pred], [gt], [mask])
    assert sade == min_ade(pred, gt, mask)
    assert sfde == min_fde(pred, gt, mask)
    assert smr == is_miss(pred, gt, mask)


def test_joint_is_at_least_mean_marginal():
    gt = np.zeros((1, 2))
    a = np.array([[[0.0, 0.0]], [[5.0, 0.0]]])  # agent a best with mode 0
    b = np.array([[[5.0, 0.0]], [[0.0, 0.0]]])  # agent b best with mode 1
    sade, _, _ = joint_metrics([a, b], [gt, gt])
    assert sade == 2.5 >= np.mean([min_ade(a, gt), min_ade(b, gt)])


def test_joint_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 5))
        inst = [random_instance(rng, k=4, t=12) for _ in range(n)]
        preds, gts, masks = zip(*inst)
        assert joint_metrics(preds, gts, masks) == joint_oracle(preds, gts, masks)


def test_miss_rate_average():
    gt = np.zeros((1, 2))
    near, far = np.zeros((1, 1, 2)), np.full((1, 1, 2), 3.0)
    assert miss_rate([near, far, far, near], [gt] * 4) == 0.5


def test_evaluate_report_and_exports(rng):
    entries = []
    for s in range(2):
        for a in range(3):
            pred, gt, mask = random_instance(rng, k=2, t=5)
            entries.append((f"s{s}", f"a{a}", "vehicle" if a else "pedestrian", pred, gt, mask))
    rep = evaluate(entries)
    assert rep.n_agents == 6 and rep.n_scenes == 2
    ades = [min_ade(p, g, m) for *_, p, g, m in entries]
    assert rep.min_ade == pytest.approx(np.mean(ades), abs=1e-12)
    assert set(rep.by_type) == {"vehicle", "pedestrian"}
    summary = json.loads(rep.to_json())
    assert summary["n_agents"] == 6
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert rows[0].keys() == {"scene_id", "agent_id", "type", "min_ade", "min_fde", "miss"}
    assert rows[-1]["scene_id"] == "ALL" and len(rows) == 7


def test_evaluate_perfect_prediction_is_zero(rng):
    gt = rng.normal(size=(4, 2))
    rep = evaluate([("s", "a", "vehicle", np.stack([gt, gt + 1]), gt, np.ones(4, bool))])
    assert rep.min_ade == 0 and rep.min_fde == 0 and rep.miss_rate == 0
