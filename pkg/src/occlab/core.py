"""Shared geometric and semantic domain types plus rigid-transform primitives.

All geometry is float64. World/LiDAR frame is right-handed, x forward,
y left, z up; camera frames are z forward. Poses are world-from-sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPoseError, ValidationError

ORTHONORMAL_TOL = 1e-9

GROUPS = ("vehicle", "human", "ground", "object", "structure")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(np.isfinite([self.x, self.y, self.z])):
            raise ValidationError(f"non-finite point ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Point3":
        a = np.asarray(a, dtype=np.float64).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class SemanticLabel:
    id: int
    name: str
    group: str
    dynamic: bool = False

    def __post_init__(self):
        if self.id < 0:
            raise ValidationError(f"label id must be unsigned, got {self.id}")
        if self.group not in GROUPS and self.group != "void":
            raise ValidationError(f"unknown label group {self.group!r}")


class LabelSet:
    """Ordered set of semantic labels with exactly one `free` and one `unknown` id.

    `free_name`/`unknown_name` pick the two special labels; everything else is a
    semantic class. Optional per-label frequencies are priors over non-free labels.
    """

    def __init__(self, labels, free_name="free", unknown_name="unknown", frequency=None):
        self.labels = tuple(labels)
        ids = [l.id for l in self.labels]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate label ids in label set")
        by_name = {l.name: l for l in self.labels}
        if free_name not in by_name or unknown_name not in by_name:
            raise ValidationError("label set must designate one free and one unknown label")
        self.free_id = by_name[free_name].id
        self.unknown_id = by_name[unknown_name].id
        self._by_id = {l.id: l for l in self.labels}
        self.frequency = dict(frequency) if frequency else None
        if self.frequency is not None:
            vals = [self.frequency.get(l.name, 0.0) for l in self.labels if l.id != self.free_id]
            if any(v < 0 for v in vals):
                raise ValidationError("label frequencies must be non-negative")
            if abs(sum(vals) - 1.0) > 1e-9:
                raise ValidationError(f"label frequencies sum to {sum(vals)}, expected 1")

    def __iter__(self):
        return iter(self.labels)

    def __len__(self):
        return len(self.labels)

    def by_id(self, label_id: int) -> SemanticLabel:
        return self._by_id[label_id]

    @property
    def max_id(self) -> int:
        return max(l.id for l in self.labels)

    def dynamic_ids(self) -> np.ndarray:
        return np.array([l.id for l in self.labels if l.dynamic], dtype=np.uint16)

    def semantic_ids(self) -> np.ndarray:
        """Class ids excluding the free and unknown designations."""
        return np.array(
            [l.id for l in self.labels if l.id not in (self.free_id, self.unknown_id)],
            dtype=np.uint16,
        )


def default_label_set() -> LabelSet:
    """14 driving classes in five groups, plus free and unknown.

    Vehicle and human groups default to dynamic.
    """
    spec = [
        (0, "free", "void", False),
        (1, "unknown", "void", False),
        (2, "road", "ground", False),
        (3, "sidewalk", "ground", False),
        (4, "building", "structure", False),
        (5, "car", "vehicle", True),
        (6, "truck", "vehicle", True),
        (7, "bicycle", "vehicle", True),
        (8, "motorcycle", "vehicle", True),
        (9, "other-vehicle", "vehicle", True),
        (10, "vegetation", "object", False),
        (11, "terrain", "ground", False),
        (12, "person", "human", True),
        (13, "fence", "structure", False),
        (14, "pole", "object", False),
        (15, "traffic-sign", "object", False),
    ]
    return LabelSet([SemanticLabel(i, n, g, d) for i, n, g, d in spec])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise InvalidPoseError("non-finite pose")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidPoseError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidPoseError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


class LabeledPointCloud:
    """Points with parallel per-point semantic label ids and timestamps.

    Timestamps are microseconds. Single-frame clouds carry one repeated
    frame time; aggregated maps keep each point's source-frame time, which
    the dynamic-object stage depends on.
    """

    __slots__ = ("points", "labels", "times")

    def __init__(self, points, labels, times):
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3).copy()
        labels = np.ascontiguousarray(labels, dtype=np.uint16).reshape(-1).copy()
        times = np.ascontiguousarray(times, dtype=np.uint64).reshape(-1).copy()
        if not (len(points) == len(labels) == len(times)):
            raise ValidationError(
                f"parallel lists differ in length: {len(points)} points, "
                f"{len(labels)} labels, {len(times)} times"
            )
        if len(points) and not np.isfinite(points).all():
            raise ValidationError("non-finite point coordinates")
        self.points = _freeze(points)
        self.labels = _freeze(labels)
        self.times = _freeze(times)

    @classmethod
    def single_frame(cls, points, labels, frame_time: int) -> "LabeledPointCloud":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        times = np.full(len(points), int(frame_time), dtype=np.uint64)
        return cls(points, labels, times)

    @classmethod
    def empty(cls) -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.uint16), np.zeros(0, dtype=np.uint64))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def frame_time(self) -> int:
        if len(self.times) == 0:
            return 0
        return int(self.times[0])

    def select(self, mask) -> "LabeledPointCloud":
        return LabeledPointCloud(self.points[mask], self.labels[mask], self.times[mask])

    def with_labels(self, labels) -> "LabeledPointCloud":
        return LabeledPointCloud(self.points, labels, self.times)

    def with_times(self, frame_time: int) -> "LabeledPointCloud":
        return LabeledPointCloud.single_frame(self.points, self.labels, frame_time)


def transform_points(cloud: LabeledPointCloud, pose: Pose) -> LabeledPointCloud:
    """Apply a rigid transform to every point; labels and times are preserved."""
    return LabeledPointCloud(pose.apply(cloud.points), cloud.labels, cloud.times)


def compose_poses(a: Pose, b: Pose) -> Pose:
    """Composition applying b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def concat_clouds(clouds) -> LabeledPointCloud:
    clouds = list(clouds)
    if not clouds:
        return LabeledPointCloud.empty()
    return LabeledPointCloud(
        np.concatenate([c.points for c in clouds]),
        np.concatenate([c.labels for c in clouds]),
        np.concatenate([c.times for c in clouds]),
    )
