"""Project LiDAR points into 2D semantic maps, transfer labels, and build maps.

Label transfer is categorical: each in-view point takes the label of its
nearest pixel, points whose label is flagged dynamic go to the dynamic cloud,
everything else (including out-of-view points, labeled unknown) stays static.
No z-buffering happens here; occlusion mistakes are cleaned downstream by the
voxel refinement stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabeledPointCloud, LabelSet, Pose, concat_clouds, transform_points
from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_from_lidar: Pose

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")


class SemanticImage:
    __slots__ = ("width", "height", "label_ids")

    def __init__(self, label_ids, labelset: LabelSet | None = None):
        label_ids = np.asarray(label_ids, dtype=np.uint16)
        if label_ids.ndim != 2:
            raise ValidationError("semantic image must be a 2D grid of label ids")
        if labelset is not None:
            known = {l.id for l in labelset}
            present = set(np.unique(label_ids).tolist())
            if not present <= known:
                raise ValidationError(f"image contains unknown label ids {sorted(present - known)}")
        self.height, self.width = label_ids.shape
        self.label_ids = label_ids


def project_to_image(cloud: LabeledPointCloud, cam: CameraModel):
    """Pinhole projection of the cloud into pixel coordinates.

    Returns parallel arrays (point_index, u, v, depth) holding only points
    with positive camera-frame depth that land inside [0,width) x [0,height).
    """
    pc = cam.cam_from_lidar.apply(cloud.points)
    z = pc[:, 2]
    in_front = z > 0
    idx = np.nonzero(in_front)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pc[idx, 0] / z[idx] + cam.cx
        v = cam.fy * pc[idx, 1] / z[idx] + cam.cy
    keep = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return idx[keep], u[keep], v[keep], z[idx][keep]


def unproject(u, v, depth, cam: CameraModel) -> np.ndarray:
    """Inverse of the pinhole formula back to camera-frame points."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    return np.stack([x, y, depth], axis=-1)


def label_points(cloud: LabeledPointCloud, img: SemanticImage, cam: CameraModel, labelset: LabelSet):
    """Transfer image labels to points and split into (static, dynamic) clouds.

    Pixel lookup rounds half up to the nearest pixel center. Out-of-view
    points are labeled unknown and kept static. The split preserves input
    order within each part, so |static| + |dynamic| = |cloud|.
    """
    if (img.width, img.height) != (cam.width, cam.height):
        raise ConfigurationError(
            f"semantic image {img.width}x{img.height} does not match camera "
            f"{cam.width}x{cam.height}"
        )
    n = len(cloud)
    labels = np.full(n, labelset.unknown_id, dtype=np.uint16)
    idx, u, v, _ = project_to_image(cloud, cam)
    px = np.clip(np.floor(u + 0.5).astype(np.int64), 0, img.width - 1)
    py = np.clip(np.floor(v + 0.5).astype(np.int64), 0, img.height - 1)
    labels[idx] = img.label_ids[py, px]

    dynamic_ids = labelset.dynamic_ids()
    is_dynamic = np.isin(labels, dynamic_ids)
    relabeled = LabeledPointCloud(cloud.points, labels, cloud.times)
    return relabeled.select(~is_dynamic), relabeled.select(is_dynamic)


def accumulate_maps(frames, poses):
    """Aggregate per-frame (static, dynamic) clouds into world-frame maps.

    Each frame's clouds are transformed by its world-from-sensor pose and
    concatenated in frame order; dynamic points keep their frame times so the
    motion trail stays attributable to source frames.
    """
    frames = list(frames)
    poses = list(poses)
    if len(frames) != len(poses):
        raise ConfigurationError(f"{len(frames)} frames but {len(poses)} poses")
    statics = [transform_points(s, p) for (s, _), p in zip(frames, poses)]
    dynamics = [transform_points(d, p) for (_, d), p in zip(frames, poses)]
    return concat_clouds(statics), concat_clouds(dynamics)
