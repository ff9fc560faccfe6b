import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgt.geometry import (
    Pose2,
    delta_pose,
    delta_pose_batch,
    delta_pose_rotated,
    local_heading,
    rotate_global_vector,
    rotate_local_vector,
    to_global_point,
    to_local_point,
    transform_scene_coords,
    wrap_angle,
)

coord = st.floats(-1e4, 1e4, allow_nan=False)
angle = st.floats(-20, 20, allow_nan=False)
poses = st.builds(Pose2.make, coord, coord, angle)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert abs(wrap_angle(3 * math.pi) - math.pi) < 1e-12
    assert wrap_angle(0.0) == 0.0


@given(angle)
def test_wrap_angle_is_in_half_open_interval(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert abs(math.sin(w) - math.sin(theta)) < 1e-9
    assert abs(math.cos(w) - math.cos(theta)) < 1e-9


def test_to_local_point_hand_example():
    ref = Pose2.make(1.0, 2.0, math.pi / 2)
    # a point one metre "north" of ref lies straight ahead in its frame
    assert np.allclose(to_local_point([1.0, 3.0], ref), [1.0, 0.0])
    assert np.allclose(to_local_point([0.0, 2.0], ref), [0.0, 1.0])


@given(poses, coord, coord)
def test_local_global_round_trip(ref, x, y):
    p = np.array([x, y])
    back = to_global_point(to_local_point(p, ref), ref)
    assert np.allclose(back, p, atol=1e-7)


@given(poses, coord, coord)
def test_vector_rotation_round_trip_preserves_norm(ref, x, y):
    v = np.array([x, y])
    loc = rotate_local_vector(v, ref)
    assert abs(np.linalg.norm(loc) - np.linalg.norm(v)) < 1e-7
    assert np.allclose(rotate_global_vector(loc, ref), v, atol=1e-7)


def test_local_heading_of_reference_is_zero():
    ref = Pose2.make(3.0, -1.0, 2.5)
    assert local_heading(2.5, ref) == 0.0


def test_delta_pose_components():
    u, v = Pose2.make(1, 1, 0.3), Pose2.make(4, 5, 1.3)
    d = delta_pose(u, v)
    assert (d.dx, d.dy) == (3.0, 4.0)
    assert abs(d.cos_dtheta - math.cos(1.0)) < 1e-12
    assert abs(d.sin_dtheta - math.sin(1.0)) < 1e-12


def test_delta_pose_identity():
    p = Pose2.make(7, -2, 0.4)
    assert np.allclose(delta_pose(p, p).as_array(), [0, 0, 1, 0])
    assert np.allclose(delta_pose_rotated(p, p).as_array(), [0, 0, 1, 0])


@given(poses, poses, angle, coord, coord)
@settings(max_examples=200)
def test_rotated_delta_pose_is_rigid_motion_invariant(u, v, rot, tx, ty):
    def move(p):
        x, y = transform_scene_coords([p.x, p.y], rot, (tx, ty))
        return Pose2.make(x, y, p.theta + rot)

    a = delta_pose_rotated(u, v).as_array()
    b = delta_pose_rotated(move(u), move(v)).as_array()
    assert np.allclose(a, b, atol=1e-6)


@given(poses, poses, coord, coord)
def test_global_delta_pose_is_translation_invariant(u, v, tx, ty):
    shift = lambda p: Pose2.make(p.x + tx, p.y + ty, p.theta)  # noqa: E731
    assert np.allclose(delta_pose(u, v).as_array(), delta_pose(shift(u), shift(v)).as_array(), atol=1e-6)


def test_global_delta_pose_is_not_rotation_invariant():
    u, v = Pose2.make(0, 0, 0), Pose2.make(10, 0, 0)

    def rot(p):
        x, y = transform_scene_coords([p.x, p.y], math.pi / 2, (0, 0))
        return Pose2.make(x, y, p.theta + math.pi / 2)

    assert not np.allclose(delta_pose(u, v).as_array(), delta_pose(rot(u), rot(v)).as_array())


def test_delta_pose_batch_matches_scalar(rng):
    src = np.column_stack([rng.normal(size=(20, 2)) * 50, rng.uniform(-3, 3, 20)])
    dst = np.column_stack([rng.normal(size=(20, 2)) * 50, rng.uniform(-3, 3, 20)])
    for rotated, fn in ((False, delta_pose), (True, delta_pose_rotated)):
        batch = delta_pose_batch(src, dst, rotated=rotated)
        ref = np.array([fn(Pose2(*s), Pose2(*d)).as_array() for s, d in zip(src, dst)])
        assert np.allclose(batch, ref, atol=1e-10)


def test_rotated_translation_lands_in_target_frame():
    u, v = Pose2.make(0, 0, 0), Pose2.make(0, 5, math.pi / 2)
    d = delta_pose_rotated(u, v)
    # u sits 5 m behind v along v's heading
    assert np.allclose([d.dx, d.dy], to_local_point([0, 0], v) * -1, atol=1e-12)
