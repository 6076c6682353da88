"""Rigid-body frames, Euler poses, and elementary DH transforms.

Conventions used throughout the package: lengths in millimetres, angles in
radians (degrees appear only at file and CLI boundaries). A frame is a plain
4x4 numpy array, homogeneous-transform layout. Euler angles follow the
industrial Z-Y-X intrinsic convention: A about z, then B about the rotated y,
then C about the twice-rotated x. Everything here is a pure function of
plain values, safe for unrestricted concurrent use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle to its unique representative in (-pi, pi]."""
    wrapped = theta - _TWO_PI * math.ceil((theta - math.pi) / _TWO_PI)
    if wrapped <= -math.pi:  # rounding can land exactly on -pi
        wrapped += _TWO_PI
    return wrapped


def wrap_angles(theta) -> np.ndarray:
    """Vectorized wrap_angle."""
    theta = np.asarray(theta, dtype=float)
    wrapped = theta - _TWO_PI * np.ceil((theta - math.pi) / _TWO_PI)
    return np.where(wrapped <= -math.pi, wrapped + _TWO_PI, wrapped)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, -s, 0.0],
        [0.0, s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([
        [c, 0.0, s, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [-s, 0.0, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([
        [c, -s, 0.0, 0.0],
        [s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def translate(x: float, y: float, z: float) -> np.ndarray:
    frame = np.eye(4)
    frame[:3, 3] = (x, y, z)
    return frame


def dh_transform(theta: float, d: float, a: float, alpha: float,
                 phi: float = 0.0) -> np.ndarray:
    """Joint transform Rz(theta+phi) . Tz(d) . Tx(a) . Rx(alpha), closed form."""
    q = theta + phi
    cq, sq = math.cos(q), math.sin(q)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [cq, -sq * ca, sq * sa, a * cq],
        [sq, cq * ca, -cq * sa, a * sq],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def compose(*frames: np.ndarray) -> np.ndarray:
    """Product of frames, applied left to right."""
    out = np.eye(4)
    for f in frames:
        out = out @ f
    return out


def invert(frame: np.ndarray) -> np.ndarray:
    """Rigid inverse (R^T, -R^T t); cheaper and exacter than a general inverse."""
    rot = frame[:3, :3]
    out = np.eye(4)
    out[:3, :3] = rot.T
    out[:3, 3] = -rot.T @ frame[:3, 3]
    return out


def frame_is_valid(frame: np.ndarray, tol: float = 1e-9) -> bool:
    """Check the frame invariants: orthonormal rotation, det > 0, exact bottom row."""
    if frame.shape != (4, 4):
        return False
    if not np.array_equal(frame[3], np.array([0.0, 0.0, 0.0, 1.0])):
        return False
    rot = frame[:3, :3]
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > tol:
        return False
    return float(np.linalg.det(rot)) > 0.0


@dataclass(frozen=True)
class Pose:
    """Position plus Z-Y-X Euler angles: x, y, z in mm; a, b, c in radians."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0

    @classmethod
    def from_array(cls, values) -> "Pose":
        x, y, z, a, b, c = (float(v) for v in values)
        return cls(x, y, z, a, b, c)

    @classmethod
    def from_degrees(cls, x, y, z, a, b, c) -> "Pose":
        return cls(float(x), float(y), float(z),
                   math.radians(a), math.radians(b), math.radians(c))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.a, self.b, self.c])

    def angles_deg(self) -> tuple[float, float, float]:
        return (math.degrees(self.a), math.degrees(self.b), math.degrees(self.c))

    def wrapped(self) -> "Pose":
        return Pose(self.x, self.y, self.z,
                    wrap_angle(self.a), wrap_angle(self.b), wrap_angle(self.c))


def frame_from_pose(pose: Pose) -> np.ndarray:
    """T(x,y,z) . Rz(a) . Ry(b) . Rx(c)."""
    ca, sa = math.cos(pose.a), math.sin(pose.a)
    cb, sb = math.cos(pose.b), math.sin(pose.b)
    cc, sc = math.cos(pose.c), math.sin(pose.c)
    return np.array([
        [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc, pose.x],
        [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc, pose.y],
        [-sb, cb * sc, cb * cc, pose.z],
        [0.0, 0.0, 0.0, 1.0],
    ])


def pose_from_frame(frame: np.ndarray) -> Pose:
    """Inverse of frame_from_pose.

    At the Euler singularity (|cos b| <= 1e-12) the c angle is fixed to 0 and
    the remaining rotation folded into a, which keeps the extraction total and
    deterministic.
    """
    rot = frame[:3, :3]
    x, y, z = frame[:3, 3]
    cos_b = math.hypot(rot[0, 0], rot[1, 0])
    if cos_b <= 1e-12:
        b = math.pi / 2 if rot[2, 0] < 0.0 else -math.pi / 2
        if rot[2, 0] < 0.0:
            a = math.atan2(rot[1, 2], rot[0, 2])
        else:
            a = math.atan2(-rot[1, 2], -rot[0, 2])
        return Pose(x, y, z, a, b, 0.0)
    a = math.atan2(rot[1, 0], rot[0, 0])
    b = math.atan2(-rot[2, 0], cos_b)
    c = math.atan2(rot[2, 1], rot[2, 2])
    return Pose(x, y, z, a, b, c)
