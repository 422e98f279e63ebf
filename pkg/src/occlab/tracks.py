"""Dynamic-object tracks: BEV rasters, keyframe interpolation, model placement.

Aggregating a moving object over time smears it into an elongated trail in
the map; these tools expose that trail in bird's-eye view for human keyframe
annotation, interpolate per-frame poses between keyframes, and rebuild a
clean per-frame object from a canonical point model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabeledPointCloud
from .errors import EmptyModelError, InvalidTrackError, ValidationError

CAPTURE_RADIUS_DEFAULTS = {"vehicle": 3.0, "human": 1.0}
CAPTURE_RADIUS_FALLBACK = 2.0

TWO_PI = 2.0 * math.pi


def normalize_yaw(yaw: float) -> float:
    """Wrap into (-pi, pi]."""
    r = yaw % TWO_PI
    if r > math.pi:
        r -= TWO_PI
    return r


@dataclass(frozen=True)
class Keyframe:
    frame_time: int
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValidationError("non-finite keyframe")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


@dataclass(frozen=True)
class InstanceTrack:
    instance_id: int
    label: int
    keyframes: tuple
    model: LabeledPointCloud | None = None

    def __post_init__(self):
        kfs = tuple(self.keyframes)
        if not kfs:
            raise InvalidTrackError(f"track {self.instance_id} has no keyframes")
        times = [k.frame_time for k in kfs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidTrackError(
                f"track {self.instance_id} keyframes must be strictly increasing in time"
            )
        if self.model is not None and len(self.model) == 0:
            raise InvalidTrackError(f"track {self.instance_id} has an empty model")
        object.__setattr__(self, "keyframes", kfs)


class BevRaster:
    """Top-down occupancy counts and per-cell dominant label over (x, y)."""

    __slots__ = ("origin", "cell", "width", "height", "count", "label")

    def __init__(self, origin, cell: float, width: int, height: int, count=None, label=None):
        if cell <= 0:
            raise ValidationError(f"cell size must be positive, got {cell}")
        self.origin = (float(origin[0]), float(origin[1]))
        self.cell = float(cell)
        self.width = int(width)
        self.height = int(height)
        shape = (self.height, self.width)
        self.count = np.zeros(shape, np.int64) if count is None else np.asarray(count, np.int64).reshape(shape)
        self.label = np.zeros(shape, np.uint16) if label is None else np.asarray(label, np.uint16).reshape(shape)

    def cell_of(self, x, y):
        ix = math.floor((x - self.origin[0]) / self.cell)
        iy = math.floor((y - self.origin[1]) / self.cell)
        return ix, iy

    def center_of(self, ix, iy):
        return (
            self.origin[0] + (ix + 0.5) * self.cell,
            self.origin[1] + (iy + 0.5) * self.cell,
        )


def rasterize_bev(m_d: LabeledPointCloud, origin, cell: float, width: int, height: int) -> BevRaster:
    """Count points per BEV cell and record each cell's majority label.

    Ties between labels break toward the smaller id; out-of-raster points are
    ignored.
    """
    raster = BevRaster(origin, cell, width, height)
    if len(m_d) == 0:
        return raster
    ix = np.floor((m_d.points[:, 0] - raster.origin[0]) / cell).astype(np.int64)
    iy = np.floor((m_d.points[:, 1] - raster.origin[1]) / cell).astype(np.int64)
    inb = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    ix, iy = ix[inb], iy[inb]
    labels = m_d.labels[inb].astype(np.int64)
    if len(labels) == 0:
        return raster
    flat = iy * width + ix
    raster.count = np.bincount(flat, minlength=width * height).reshape(height, width)

    # majority label per cell: count (cell, label) pairs, then keep the pair
    # with the highest count (smallest label on ties)
    base = int(labels.max()) + 1
    pair = flat * base + labels
    uniq, counts = np.unique(pair, return_counts=True)
    cell_id = uniq // base
    lab = uniq % base
    order = np.lexsort((lab, -counts, cell_id))
    cell_id, lab = cell_id[order], lab[order]
    first = np.unique(cell_id, return_index=True)[1]
    dominant = np.zeros(width * height, dtype=np.uint16)
    dominant[cell_id[first]] = lab[first]
    raster.label = dominant.reshape(height, width)
    return raster


def interpolate_track(track: InstanceTrack, frame_times):
    """Per-frame (frame_time, x, y, yaw) along the track.

    x and y interpolate linearly between bracketing keyframes; yaw follows the
    shortest angular arc via unit-vector interpolation. Queries at exact
    keyframe times reproduce the keyframe; queries outside the keyframed span
    clamp to the nearest keyframe.
    """
    kfs = track.keyframes
    times = np.array([k.frame_time for k in kfs], dtype=np.int64)
    out = []
    for t in frame_times:
        t = int(t)
        j = int(np.searchsorted(times, t))
        if j < len(kfs) and kfs[j].frame_time == t:
            k = kfs[j]
            out.append((t, k.x, k.y, k.yaw))
            continue
        if j == 0:
            k = kfs[0]
            out.append((t, k.x, k.y, k.yaw))
            continue
        if j == len(kfs):
            k = kfs[-1]
            out.append((t, k.x, k.y, k.yaw))
            continue
        a, b = kfs[j - 1], kfs[j]
        alpha = (t - a.frame_time) / (b.frame_time - a.frame_time)
        x = a.x + alpha * (b.x - a.x)
        y = a.y + alpha * (b.y - a.y)
        cx = (1.0 - alpha) * math.cos(a.yaw) + alpha * math.cos(b.yaw)
        sy = (1.0 - alpha) * math.sin(a.yaw) + alpha * math.sin(b.yaw)
        yaw = normalize_yaw(math.atan2(sy, cx))
        out.append((t, x, y, yaw))
    return out


def _yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def place_object(track: InstanceTrack, at) -> LabeledPointCloud:
    """Rigidly place the canonical model at BEV pose (x, y, yaw).

    The model is rotated by yaw about z and translated in the ground plane;
    every output point carries the track's label.
    """
    if track.model is None or len(track.model) == 0:
        raise EmptyModelError(f"track {track.instance_id} has no model to place")
    x, y, yaw = at
    pts = track.model.points @ _yaw_rotation(yaw).T
    pts = pts + np.array([x, y, 0.0])
    labels = np.full(len(pts), track.label, dtype=np.uint16)
    return LabeledPointCloud(pts, labels, track.model.times)


def build_model(
    m_d: LabeledPointCloud,
    draft: InstanceTrack,
    radius: float | None = None,
    group: str | None = None,
) -> InstanceTrack:
    """Reconstruct a canonical object model from the dynamic map trail.

    For every keyframe, points of that frame within the capture radius of the
    keyframed BEV position are de-rotated and de-translated into the object
    frame; the merged set is recentered so its BEV centroid sits at the
    origin. Heights are left capture-relative because placement translates
    only in the ground plane.
    """
    if radius is None:
        radius = CAPTURE_RADIUS_DEFAULTS.get(group or "", CAPTURE_RADIUS_FALLBACK)
    captured = []
    for k in draft.keyframes:
        in_frame = m_d.times == np.uint64(k.frame_time)
        if not in_frame.any():
            continue
        pts = m_d.points[in_frame]
        d2 = (pts[:, 0] - k.x) ** 2 + (pts[:, 1] - k.y) ** 2
        near = d2 < radius * radius
        if not near.any():
            continue
        local = (pts[near] - np.array([k.x, k.y, 0.0])) @ _yaw_rotation(-k.yaw).T
        captured.append((local, m_d.times[in_frame][near]))
    if not captured:
        raise EmptyModelError(
            f"no points captured for track {draft.instance_id}; widen the capture radius"
        )
    pts = np.concatenate([c[0] for c in captured])
    times = np.concatenate([c[1] for c in captured])
    center = pts.mean(axis=0)
    pts = pts - np.array([center[0], center[1], 0.0])
    labels = np.full(len(pts), draft.label, dtype=np.uint16)
    model = LabeledPointCloud(pts, labels, times)
    return InstanceTrack(draft.instance_id, draft.label, draft.keyframes, model)
