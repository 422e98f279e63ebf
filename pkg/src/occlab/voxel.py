"""Grid geometry: bounds to dimensions, point indexing, and ray-cast visibility.

Voxels tile the bounding box with half-open intervals [min, min + voxel) per
axis, so every point inside the box belongs to exactly one voxel and points
exactly on a max face are outside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

DIVISIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class GridSpec:
    min_corner: np.ndarray
    max_corner: np.ndarray
    voxel: float
    dims: tuple

    def centers(self) -> np.ndarray:
        """Voxel centers as an (nx*ny*nz, 3) array, x-fastest order."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack(
            [ix.ravel(order="F"), iy.ravel(order="F"), iz.ravel(order="F")], axis=1
        )
        return self.min_corner + (idx + 0.5) * self.voxel


def grid_from_bounds(min_corner, max_corner, voxel: float) -> GridSpec:
    """Validate bounds and derive integer grid dimensions.

    Each extent must be an exact multiple of the voxel size (within 1e-6 m).
    """
    min_corner = np.asarray(min_corner, dtype=np.float64).reshape(3)
    max_corner = np.asarray(max_corner, dtype=np.float64).reshape(3)
    if voxel <= 0:
        raise ConfigurationError(f"voxel size must be positive, got {voxel}")
    extent = max_corner - min_corner
    if (extent <= 0).any():
        raise ConfigurationError(f"degenerate bounding box, extent {extent.tolist()}")
    dims = np.round(extent / voxel).astype(int)
    if (dims < 1).any() or np.abs(dims * voxel - extent).max() > DIVISIBILITY_TOL:
        raise ConfigurationError(
            f"extent {extent.tolist()} is not divisible by voxel {voxel}"
        )
    min_corner.flags.writeable = False
    max_corner.flags.writeable = False
    return GridSpec(min_corner, max_corner, float(voxel), tuple(int(d) for d in dims))


def voxel_index(p, spec: GridSpec):
    """Voxel (ix, iy, iz) containing p, or None if p is outside the box."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if (p < spec.min_corner).any() or (p >= spec.max_corner).any():
        return None
    idx = np.floor((p - spec.min_corner) / spec.voxel).astype(int)
    idx = np.minimum(idx, np.asarray(spec.dims) - 1)  # guard float roundup at max faces
    return tuple(int(i) for i in idx)


def voxel_indices(points: np.ndarray, spec: GridSpec):
    """Vectorized voxel_index: returns (inside_mask, (m, 3) indices of inside points)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = (points >= spec.min_corner).all(axis=1) & (points < spec.max_corner).all(axis=1)
    idx = np.floor((points[inside] - spec.min_corner) / spec.voxel).astype(np.int64)
    np.minimum(idx, np.asarray(spec.dims) - 1, out=idx)
    return inside, idx


class VoxelGrid:
    """Dense semantic label grid with per-voxel valid/occluded flags.

    Arrays are shaped (nx, ny, nz) and indexed [ix, iy, iz]; serialization
    flattens x-fastest.
    """

    __slots__ = ("spec", "labels", "valid", "occluded")

    def __init__(self, spec: GridSpec, labels=None, valid=None, occluded=None, fill=0):
        nx, ny, nz = spec.dims
        shape = (nx, ny, nz)
        self.spec = spec
        if labels is None:
            labels = np.full(shape, fill, dtype=np.uint16)
        else:
            labels = np.asarray(labels, dtype=np.uint16).reshape(shape).copy()
        if valid is None:
            valid = np.ones(shape, dtype=bool)
        else:
            valid = np.asarray(valid, dtype=bool).reshape(shape).copy()
        if occluded is None:
            occluded = np.zeros(shape, dtype=bool)
        else:
            occluded = np.asarray(occluded, dtype=bool).reshape(shape).copy()
        self.labels = labels
        self.valid = valid
        self.occluded = occluded

    @property
    def dims(self):
        return self.spec.dims

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.spec, self.labels, self.valid, self.occluded)


def compute_visibility(grid: VoxelGrid, sensor, free_id: int = 0) -> VoxelGrid:
    """Mark voxels occluded from a sensor position; valid = not occluded.

    A voxel is occluded when the segment from the sensor to its center enters
    any non-free voxel before entering the target voxel. Traversal walks the
    integer grid (Amanatides-Woo), vectorized over all target voxels, so the
    result is independent of evaluation order.
    """
    sensor = np.asarray(sensor, dtype=np.float64).reshape(3)
    if not np.isfinite(sensor).all():
        raise ConfigurationError("sensor position must be finite")
    spec = grid.spec
    nx, ny, nz = spec.dims
    dims = np.array([nx, ny, nz])
    occupied = grid.labels != free_id

    centers = spec.centers()  # (n, 3), x-fastest
    n = len(centers)
    d = centers - sensor

    # Clip the segment start into the box when the sensor is outside.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (spec.min_corner - sensor) / d
        t_hi = (spec.max_corner - sensor) / d
    t_near = np.minimum(t_lo, t_hi)
    t_near[~np.isfinite(t_near)] = -np.inf
    t0 = np.clip(t_near.max(axis=1), 0.0, 1.0)
    start = sensor + t0[:, None] * d

    cur = np.floor((start - spec.min_corner) / spec.voxel).astype(np.int64)
    np.clip(cur, 0, dims - 1, out=cur)
    target = np.floor((centers - spec.min_corner) / spec.voxel).astype(np.int64)
    np.clip(target, 0, dims - 1, out=target)

    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        next_boundary = spec.min_corner + (cur + (step > 0)) * spec.voxel
        t_max = (next_boundary - sensor) / d
        t_delta = spec.voxel / np.abs(d)
    t_max[step == 0] = np.inf
    t_delta[step == 0] = np.inf

    occluded_flat = np.zeros(n, dtype=bool)
    active = np.arange(n)
    x_fast = np.array([1, nx, nx * ny], dtype=np.int64)  # flat = ix + nx*iy + nx*ny*iz

    while len(active):
        at_target = (cur[active] == target[active]).all(axis=1)
        reached = active[at_target]
        active = active[~at_target]
        if len(active) == 0:
            break
        flat = cur[active] @ x_fast
        blocked = occupied.ravel(order="F")[flat]
        occluded_flat[active[blocked]] = True
        active = active[~blocked]
        if len(active) == 0:
            break
        tm = t_max[active]
        axis = np.argmin(tm, axis=1)
        rows = np.arange(len(active))
        # Float safety: a ray that overruns t=1 without matching its target
        # voxel index is treated as reached, not occluded.
        overrun = tm[rows, axis] > 1.0
        cur[active[~overrun], axis[~overrun]] += step[active[~overrun], axis[~overrun]]
        t_max[active[~overrun], axis[~overrun]] += t_delta[active[~overrun], axis[~overrun]]
        active = active[~overrun]

    shape = (nx, ny, nz)
    occluded = occluded_flat.reshape(shape, order="F")
    out = grid.copy()
    out.occluded = occluded
    out.valid = ~occluded
    return out
