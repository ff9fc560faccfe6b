"""Rigid 2D frame arithmetic.

Every node of the driving graph owns a reference pose; features are expressed
in that node-local frame.  All computations here run in float64.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


def wrap_angle(theta):
    """Wrap angle(s) into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=np.float64), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


class Pose2(NamedTuple):
    x: float
    y: float
    theta: float

    @classmethod
    def make(cls, x, y, theta) -> "Pose2":
        return cls(float(x), float(y), wrap_angle(theta))

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def rotation(self) -> np.ndarray:
        """R(-theta): maps global axes onto the local axes."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, s], [-s, c]], dtype=np.float64)


class DeltaPose(NamedTuple):
    dx: float
    dy: float
    cos_dtheta: float
    sin_dtheta: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


def to_local_point(p, ref: Pose2) -> np.ndarray:
    """Express point(s) ``p`` (..., 2) in the frame of ``ref``."""
    p = np.asarray(p, dtype=np.float64)
    return (p - ref.origin) @ ref.rotation().T


def to_global_point(p, ref: Pose2) -> np.ndarray:
    """Inverse of :func:`to_local_point`."""
    p = np.asarray(p, dtype=np.float64)
    return p @ ref.rotation() + ref.origin


def rotate_local_vector(v, ref: Pose2) -> np.ndarray:
    """Rotate vector(s) into the frame of ``ref`` (no translation)."""
    return np.asarray(v, dtype=np.float64) @ ref.rotation().T


def rotate_global_vector(v, ref: Pose2) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) @ ref.rotation()


def local_heading(h, ref: Pose2):
    return wrap_angle(np.asarray(h, dtype=np.float64) - ref.theta)


def delta_pose(ref_u: Pose2, ref_v: Pose2) -> DeltaPose:
    """Frame change from ``u`` to ``v``; translation kept in global axes."""
    dtheta = ref_v.theta - ref_u.theta
    return DeltaPose(ref_v.x - ref_u.x, ref_v.y - ref_u.y, math.cos(dtheta), math.sin(dtheta))


def delta_pose_rotated(ref_u: Pose2, ref_v: Pose2) -> DeltaPose:
    """Like :func:`delta_pose` but with the translation expressed in ``v``'s axes.

    Unlike the global-axis form this is invariant under a rigid motion of the
    whole scene.
    """
    d = delta_pose(ref_u, ref_v)
    dx, dy = rotate_local_vector([d.dx, d.dy], ref_v)
    return DeltaPose(float(dx), float(dy), d.cos_dtheta, d.sin_dtheta)


def delta_pose_batch(src: np.ndarray, dst: np.ndarray, rotated: bool = False) -> np.ndarray:
    """Vectorised delta pose for pose arrays of shape (E, 3).  Returns (E, 4)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    dx = dst[:, 0] - src[:, 0]
    dy = dst[:, 1] - src[:, 1]
    dtheta = dst[:, 2] - src[:, 2]
    if rotated:
        c, s = np.cos(dst[:, 2]), np.sin(dst[:, 2])
        dx, dy = c * dx + s * dy, -s * dx + c * dy
    return np.stack([dx, dy, np.cos(dtheta), np.sin(dtheta)], axis=1)


def transform_scene_coords(points, rotation: float, translation) -> np.ndarray:
    """Apply the global rigid motion ``x -> R(rotation) x + translation``."""
    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(points, dtype=np.float64) @ rot.T + np.asarray(translation, dtype=np.float64)
