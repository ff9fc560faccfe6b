import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgt.autodiff import ParamTable, Tensor, precision
from hdgt.batch import normalize_agent_inputs, pad_points
from hdgt.config import ModelConfig
from hdgt.encoders import encode_agent_node, encode_map_node, init_encoder_params, view_shift
from hdgt.geometry import to_global_point
from hdgt.graph import reference_pose_of
from hdgt.scene import AgentTrack

CFG = ModelConfig(hidden=16, n_heads=2, n_layers=1)


@pytest.fixture(scope="module")
def params():
    with precision(np.float64):
        p = ParamTable(seed=7)
        init_encoder_params(p, CFG)
    return p


def t64(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def curvy_track(rng, n=11, offset=(0.0, 0.0), heading_offset=0.0):
    t = np.arange(n) * 0.1
    xy = np.column_stack([5 * t, 0.3 * t ** 2]) + rng.normal(scale=0.05, size=(n, 2))
    heading = np.arctan2(np.gradient(xy[:, 1]), np.gradient(xy[:, 0]))
    c, s = np.cos(heading_offset), np.sin(heading_offset)
    rot = np.array([[c, -s], [s, c]])
    xy = xy @ rot.T + np.asarray(offset)
    vel = np.gradient(xy, axis=0) / 0.1
    states = np.column_stack([xy, vel, heading + heading_offset, np.ones(n)])
    return AgentTrack("a", "vehicle", states, (1.9, 4.6, 1.5))


def test_final_step_is_origin(rng):
    a = curvy_track(rng, offset=(100.0, -40.0))
    x = normalize_agent_inputs(a, reference_pose_of(a, 11), 11)
    assert x.shape == (11, 9)
    np.testing.assert_allclose(x[-1, :2], 0, atol=1e-12)
    np.testing.assert_allclose(x[-1, 4:6], [0, 1], atol=1e-12)
    np.testing.assert_array_equal(x[:, 7:9], np.tile([1.9, 4.6], (11, 1)))


def test_stationary_agent_has_zero_positions():
    states = np.tile([3.0, 4.0, 0.0, 0.0, 1.2, 1.0], (11, 1))
    a = AgentTrack("s", "pedestrian", states, (0.6, 0.6, 1.7))
    x = normalize_agent_inputs(a, reference_pose_of(a, 11), 11)
    np.testing.assert_allclose(x[:, :4], 0, atol=1e-12)


def test_normalized_positions_round_trip(rng):
    a = curvy_track(rng, offset=(12.0, 7.0), heading_offset=2.0)
    ref = reference_pose_of(a, 11)
    x = normalize_agent_inputs(a, ref, 11)
    np.testing.assert_allclose(to_global_point(x[:, :2], ref), a.states[:, :2], atol=1e-9)


def test_height_channel_optional(rng):
    a = curvy_track(rng)
    assert normalize_agent_inputs(a, reference_pose_of(a, 11), 11, use_height=True).shape == (11, 10)


def test_agent_encoder_shape_any_length(params, rng):
    for length in (1, 2, 5, 11, 20):
        out = encode_agent_node(params, t64(rng.normal(size=(3, length, 9))), CFG)
        assert out.shape == (3, 16)


def test_agent_encoder_ignores_global_position(params, rng):
    seed_rng = np.random.default_rng(3)
    a = curvy_track(seed_rng)
    seed_rng = np.random.default_rng(3)
    b = curvy_track(seed_rng, offset=(500.0, -300.0), heading_offset=0.0)
    xa = normalize_agent_inputs(a, reference_pose_of(a, 11), 11)
    xb = normalize_agent_inputs(b, reference_pose_of(b, 11), 11)
    fa = encode_agent_node(params, t64(xa[None]), CFG).data
    fb = encode_agent_node(params, t64(xb[None]), CFG).data
    np.testing.assert_allclose(fa, fb, atol=1e-9)


def test_agent_encoder_batch_rows_independent(params, rng):
    x = rng.normal(size=(4, 11, 9))
    full = encode_agent_node(params, t64(x), CFG).data
    one = encode_agent_node(params, t64(x[2:3]), CFG).data
    np.testing.assert_array_equal(full[2:3], one)


def _map(params, pts, kind=0, subtype=0, light=0):
    return encode_map_node(params, t64(pts[None]), np.array([kind]), np.array([subtype]), np.array([light]), CFG).data


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_pointnet_order_invariant(n, seed):
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        p = ParamTable(seed=1)
        init_encoder_params(p, CFG)
    pts = rng.normal(scale=2.0, size=(n, 2))
    np.testing.assert_allclose(_map(p, pts), _map(p, pts[rng.permutation(n)]), atol=1e-6)


def test_pointnet_duplicates_and_padding(params, rng):
    pts = rng.normal(size=(5, 2))
    base = _map(params, pts)
    np.testing.assert_allclose(_map(params, np.vstack([pts, pts[[1, 3]]])), base, atol=1e-12)
    padded = pad_points([pts, pts[:2]])
    both = encode_map_node(params, t64(padded), np.zeros(2, int), np.zeros(2, int), np.zeros(2, int), CFG).data
    np.testing.assert_allclose(both[0], base[0], atol=1e-12)
    np.testing.assert_allclose(both[1], _map(params, pts[:2])[0], atol=1e-12)


def test_pointnet_single_point_and_embeddings(params):
    one = _map(params, np.array([[0.0, 0.0]]))
    assert one.shape == (1, 16) and np.all(np.isfinite(one))
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert not np.allclose(_map(params, pts, kind=0), _map(params, pts, kind=2))
    assert not np.allclose(_map(params, pts, light=1), _map(params, pts, light=3))


def test_view_shift_is_deterministic_and_typed(params, rng):
    u = t64(rng.normal(size=(2, 16)))
    d = t64(np.tile([0.3, -0.1, 1.0, 0.0], (2, 1)))
    a = view_shift(params, u, d, "Agent").data
    assert a.shape == (2, 16)
    np.testing.assert_array_equal(a, view_shift(params, u, d, "Agent").data)
    same = t64(np.tile(rng.normal(size=(1, 16)), (2, 1)))
    out = view_shift(params, same, d, "Lane").data
    np.testing.assert_array_equal(out[0], out[1])
    assert not np.allclose(view_shift(params, u, d, "Lane").data, a)


def test_view_shift_depends_on_pose(params, rng):
    u = t64(rng.normal(size=(1, 16)))
    a = view_shift(params, u, t64([[0.0, 0.0, 1.0, 0.0]]), "Agent").data
    b = view_shift(params, u, t64([[1.0, 0.0, 0.0, 1.0]]), "Agent").data
    assert not np.allclose(a, b)

