"""Core geometric and semantic value types.

Poses are full SE(3) rigid transforms (translation in meters, rotation as a
unit quaternion). The synthetic world is planar, so z/roll/pitch stay near
zero in practice, but nothing here assumes it. Quaternions are stored
(w, x, y, z), renormalized after every construction and composition, and
canonicalized to a non-negative leading component so equal rotations
serialize identically.

All types are immutable values and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

# Simulation time is counted in whole steps.
Timestamp = int

_QUAT_TOL = 1e-9


class SemanticClass(IntEnum):
    """Semantic label set of the synthetic world."""

    Road = 0
    SideWalk = 1
    Building = 2
    Wall = 3
    Fence = 4
    Pole = 5
    TrafficSign = 6
    TrafficLight = 7
    GuardRail = 8
    Vegetation = 9
    Terrain = 10
    Ground = 11
    Vehicles = 12
    Pedestrian = 13
    Static = 14
    Dynamic = 15
    Other = 16
    Unlabeled = 17
    Sky = 18
    Bridge = 19
    RailTrack = 20
    Water = 21


THING_CLASSES = frozenset({SemanticClass.Vehicles, SemanticClass.Pedestrian})


def is_thing(cls: int) -> bool:
    return cls in THING_CLASSES


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.sqrt(float(q @ q))
    if n < _QUAT_TOL:
        raise ValueError("degenerate quaternion")
    q = q / n
    # canonical sign: first nonzero component positive
    for v in q:
        if abs(v) > _QUAT_TOL:
            if v < 0.0:
                q = -q
            break
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < _QUAT_TOL:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    s = np.sin(half) / n
    return quat_normalize(np.array(
        [np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s]))


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        # first-order expansion keeps small updates smooth
        q = np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
        return quat_normalize(q)
    return quat_from_axis_angle(v / angle, angle)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    s = np.sqrt(x * x + y * y + z * z)
    if s < 1e-12:
        return np.array([2.0 * x, 2.0 * y, 2.0 * z])
    angle = 2.0 * np.arctan2(s, w)
    if angle > np.pi:
        angle -= 2.0 * np.pi
    return np.array([x, y, z]) * (angle / s)


def quat_angle(q: np.ndarray) -> float:
    """Absolute rotation angle of a unit quaternion, in [0, pi]."""
    s = float(np.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]))
    return 2.0 * float(np.arctan2(s, abs(float(q[0]))))


def quat_yaw(q: np.ndarray) -> float:
    """Heading about +z for near-planar rotations."""
    w, x, y, z = q
    return float(np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

class Pose:
    """Rigid transform: p_world = R(q) @ p_local + t."""

    __slots__ = ("t", "q")

    def __init__(self, t, q):
        t = np.asarray(t, dtype=np.float64).reshape(3).copy()
        q = quat_normalize(np.asarray(q, dtype=np.float64).reshape(4).copy())
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_translation(x: float, y: float, z: float = 0.0) -> "Pose":
        return Pose(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_xy_yaw(x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        return Pose(np.array([x, y, z]),
                    quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw))

    @staticmethod
    def rot_z(angle: float) -> "Pose":
        return Pose(np.zeros(3),
                    quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), angle))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def yaw(self) -> float:
        return quat_yaw(self.q)

    def compose(self, other: "Pose") -> "Pose":
        r = quat_to_matrix(self.q)
        return Pose(r @ other.t + self.t, quat_multiply(self.q, other.q))

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.q)
        return Pose(-(quat_to_matrix(qi) @ self.t), qi)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        r = quat_to_matrix(self.q)
        if pts.ndim == 1:
            return r @ pts + self.t
        return pts @ r.T + self.t

    def distance(self, other: "Pose") -> tuple[float, float]:
        """(translation distance in meters, rotation angle in radians)."""
        dt = float(np.linalg.norm(self.t - other.t))
        dq = quat_multiply(quat_conjugate(self.q), other.q)
        return dt, quat_angle(dq)

    def approx_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        dt, da = self.distance(other)
        return dt <= tol and da <= tol

    def to_list(self) -> list:
        return [list(self.t), list(self.q)]

    @staticmethod
    def from_list(data) -> "Pose":
        return Pose(np.array(data[0]), np.array(data[1]))

    def __repr__(self):
        return f"Pose(t={self.t.tolist()}, q={self.q.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    return a.distance(b)


# ---------------------------------------------------------------------------
# semantic point clouds
# ---------------------------------------------------------------------------

FRAMES = ("sensor", "keyframe", "world")

NO_INSTANCE = -1


@dataclass(frozen=True)
class SemanticPoint:
    """Single labeled point; instance_id is None for stuff classes."""

    position: np.ndarray
    cls: SemanticClass
    instance_id: int | None = None


class SemanticPointCloud:
    """Column-oriented labeled point cloud.

    xyz: (N, 3) float64; classes: (N,) int16; instance_ids: (N,) int64 with
    -1 meaning absent. Instance ids must be present exactly for thing-class
    points. Instances are stored column-wise so the hot paths stay in numpy.
    """

    __slots__ = ("xyz", "classes", "instance_ids", "frame")

    def __init__(self, xyz, classes, instance_ids=None, frame="sensor"):
        xyz = np.ascontiguousarray(xyz, dtype=np.float64).reshape(-1, 3)
        classes = np.ascontiguousarray(classes, dtype=np.int16).reshape(-1)
        if instance_ids is None:
            instance_ids = np.full(len(classes), NO_INSTANCE, dtype=np.int64)
        else:
            instance_ids = np.ascontiguousarray(
                instance_ids, dtype=np.int64).reshape(-1)
        if not (len(xyz) == len(classes) == len(instance_ids)):
            raise ValueError("column length mismatch")
        if frame not in FRAMES:
            raise ValueError(f"unknown frame {frame!r}")
        thing = np.isin(classes, [int(c) for c in THING_CLASSES])
        if np.any(thing != (instance_ids >= 0)):
            raise ValueError("instance ids must be present exactly for thing classes")
        self.xyz = xyz
        self.classes = classes
        self.instance_ids = instance_ids
        self.frame = frame

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @staticmethod
    def empty(frame: str = "sensor") -> "SemanticPointCloud":
        return SemanticPointCloud(np.empty((0, 3)), np.empty(0, dtype=np.int16),
                                  frame=frame)

    @staticmethod
    def from_points(points, frame: str = "sensor") -> "SemanticPointCloud":
        xyz = np.array([p.position for p in points], dtype=np.float64).reshape(-1, 3)
        classes = np.array([int(p.cls) for p in points], dtype=np.int16)
        inst = np.array(
            [NO_INSTANCE if p.instance_id is None else p.instance_id
             for p in points], dtype=np.int64)
        return SemanticPointCloud(xyz, classes, inst, frame)

    def point(self, i: int) -> SemanticPoint:
        inst = int(self.instance_ids[i])
        return SemanticPoint(self.xyz[i].copy(), SemanticClass(int(self.classes[i])),
                             None if inst < 0 else inst)

    def select(self, mask) -> "SemanticPointCloud":
        return SemanticPointCloud(self.xyz[mask], self.classes[mask],
                                  self.instance_ids[mask], self.frame)

    def with_frame(self, frame: str) -> "SemanticPointCloud":
        return SemanticPointCloud(self.xyz, self.classes, self.instance_ids, frame)

    @staticmethod
    def concat(clouds, frame=None) -> "SemanticPointCloud":
        clouds = list(clouds)
        if not clouds:
            return SemanticPointCloud.empty(frame or "world")
        frame = frame or clouds[0].frame
        return SemanticPointCloud(
            np.concatenate([c.xyz for c in clouds]),
            np.concatenate([c.classes for c in clouds]),
            np.concatenate([c.instance_ids for c in clouds]),
            frame)

    def class_histogram(self) -> dict[int, int]:
        vals, counts = np.unique(self.classes, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def transform_cloud(p: Pose, c: SemanticPointCloud,
                    frame: str | None = None) -> SemanticPointCloud:
    """Map every point position by p; labels and instances untouched."""
    return SemanticPointCloud(p.apply(c.xyz), c.classes, c.instance_ids,
                              frame or c.frame)
