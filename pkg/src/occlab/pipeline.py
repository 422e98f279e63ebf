"""Manifest/config handling and the end-to-end label generation run.

A run executes: per-frame label transfer -> map aggregation -> ground
extraction -> per-frame clustering and relabeling -> dynamic-object
interpolation and placement -> per-frame voxel voting -> visibility masking,
and writes one voxel grid file per frame plus a JSON report.

Per-frame work is pure and seeded, so results are bitwise identical for any
worker count. Any stage failure removes partial outputs and surfaces the
stage name, frame, and cause.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import LabeledPointCloud, concat_clouds, transform_points
from .errors import ConfigurationError, LoadError, PipelineError
from .formats import (
    FORMAT_VERSION,
    read_calibration,
    read_label_set,
    read_point_cloud,
    read_poses,
    read_semantic_image,
    read_tracks,
    write_voxel_grid,
)
from .projection import accumulate_maps, label_points
from .refine import fit_ground, kmeans_frame, relabel_clusters, vote_voxels
from .tracks import CAPTURE_RADIUS_DEFAULTS, CAPTURE_RADIUS_FALLBACK, build_model, interpolate_track, place_object
from .voxel import compute_visibility, grid_from_bounds


@dataclass
class PipelineConfig:
    grid_min: tuple = (-25.6, -25.6, -3.0)
    grid_max: tuple = (25.6, 25.6, 3.4)
    voxel: float = 0.4
    epsilon: float = 0.2
    ransac_iterations: int = 512
    kmeans_divisor: int = 400
    kmeans_max_iters: int = 50
    tau_us: float = 50000.0
    hats_cell: int = 8
    capture_radius: dict = field(default_factory=lambda: dict(CAPTURE_RADIUS_DEFAULTS))
    dynamic_mode: str = "replace"
    seed: int = 0
    tie_break: str = "smaller-id"

    def __post_init__(self):
        for name in ("voxel", "epsilon", "tau_us"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("ransac_iterations", "kmeans_divisor", "kmeans_max_iters", "hats_cell"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.dynamic_mode not in ("replace", "merge"):
            raise ConfigurationError(f"dynamic_mode must be replace or merge, got {self.dynamic_mode}")
        if self.tie_break != "smaller-id":
            raise ConfigurationError(f"unsupported tie-break policy {self.tie_break!r}")

    def grid_spec(self):
        return grid_from_bounds(self.grid_min, self.grid_max, self.voxel)

    def radius_for(self, group: str) -> float:
        return float(self.capture_radius.get(group, CAPTURE_RADIUS_FALLBACK))

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        if doc.pop("version", FORMAT_VERSION) != FORMAT_VERSION:
            raise ConfigurationError(f"{path}: unsupported config version")
        doc["grid_min"] = tuple(doc.get("grid_min", cls.grid_min))
        doc["grid_max"] = tuple(doc.get("grid_max", cls.grid_max))
        return cls(**doc)

    def to_file(self, path):
        doc = {"version": FORMAT_VERSION, **asdict(self)}
        doc["grid_min"] = list(self.grid_min)
        doc["grid_max"] = list(self.grid_max)
        Path(path).write_text(json.dumps(doc, indent=2))


@dataclass(frozen=True)
class FrameEntry:
    frame_time: int
    cloud: Path
    pose_index: int
    semantic_image: Path
    image: Path | None = None
    event_window: tuple | None = None


class SequenceManifest:
    """Validated listing of one sequence's inputs; paths resolve against the
    manifest's own directory."""

    def __init__(self, sequence, calibration, labelset, poses, frames, tracks=None, base=None):
        base = Path(base or ".")
        self.sequence = sequence
        self.calibration = base / calibration
        self.labelset = base / labelset
        self.poses = base / poses
        self.tracks = base / tracks if tracks else None
        self.frames = list(frames)
        times = [f.frame_time for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise LoadError(f"manifest {sequence}: frame times must strictly increase")
        for path in [self.calibration, self.labelset, self.poses] + [
            base / f.cloud for f in self.frames
        ] + [base / f.semantic_image for f in self.frames]:
            if not Path(path).exists():
                raise LoadError(f"manifest {sequence}: missing file {path}")
        self._base = base

    def resolve(self, p) -> Path:
        return self._base / p

    @classmethod
    def load(cls, path) -> "SequenceManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise LoadError(f"manifest not found: {path}")
        if doc.get("version") != FORMAT_VERSION:
            raise LoadError(f"{path}: unsupported manifest version {doc.get('version')}")
        frames = [
            FrameEntry(
                int(f["frame_time"]),
                Path(f["cloud"]),
                int(f["pose_index"]),
                Path(f["semantic_image"]),
                Path(f["image"]) if f.get("image") else None,
                tuple(f["event_window"]) if f.get("event_window") else None,
            )
            for f in doc["frames"]
        ]
        return cls(
            doc["sequence"], doc["calibration"], doc["labelset"], doc["poses"],
            frames, doc.get("tracks"), base=path.parent,
        )


def _load_frame_cloud(manifest, entry) -> LabeledPointCloud:
    points, _ = read_point_cloud(manifest.resolve(entry.cloud))
    labels = np.zeros(len(points), dtype=np.uint16)
    return LabeledPointCloud.single_frame(points, labels, entry.frame_time)


def run_pipeline(manifest: SequenceManifest, config: PipelineConfig, out_dir, jobs: int = 1):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    timings = {}
    stage = "load"
    frame_id = None
    try:
        t0 = time.perf_counter()
        if not manifest.frames:
            report = {"version": FORMAT_VERSION, "sequence": manifest.sequence,
                      "frames": 0, "stage_seconds": {}, "per_frame": []}
            (out_dir / f"{manifest.sequence}.report.json").write_text(json.dumps(report, indent=2))
            return report

        labelset = read_label_set(manifest.labelset)
        cam = read_calibration(manifest.calibration)
        poses = read_poses(manifest.poses)
        clouds = []
        images = []
        for entry in manifest.frames:
            frame_id = entry.frame_time
            if entry.pose_index >= len(poses):
                raise LoadError(f"pose index {entry.pose_index} out of range ({len(poses)} poses)")
            clouds.append(_load_frame_cloud(manifest, entry))
            images.append(read_semantic_image(manifest.resolve(entry.semantic_image)))
        frame_poses = [poses[e.pose_index] for e in manifest.frames]
        frame_id = None
        timings["load"] = time.perf_counter() - t0

        stage = "project"
        t0 = time.perf_counter()
        def _project(i):
            return label_points(clouds[i], images[i], cam, labelset)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            split = list(pool.map(_project, range(len(clouds))))
        timings["project"] = time.perf_counter() - t0

        stage = "map"
        t0 = time.perf_counter()
        m_s, m_d = accumulate_maps(split, frame_poses)
        timings["map"] = time.perf_counter() - t0

        stage = "ground"
        t0 = time.perf_counter()
        plane, m_g, m_non_g = fit_ground(
            m_s, config.epsilon, config.ransac_iterations, config.seed
        )
        timings["ground"] = time.perf_counter() - t0

        stage = "cluster"
        t0 = time.perf_counter()
        refined_chunks = [m_g]
        for i, entry in enumerate(manifest.frames):
            frame_id = entry.frame_time
            frame_pts = m_non_g.select(m_non_g.times == np.uint64(entry.frame_time))
            if len(frame_pts) == 0:
                continue
            k = max(1, round(len(frame_pts) / config.kmeans_divisor))
            clustering = kmeans_frame(frame_pts, k, config.kmeans_max_iters, config.seed + i)
            refined_chunks.append(relabel_clusters(frame_pts, clustering, labelset))
        frame_id = None
        m_s_refined = concat_clouds(refined_chunks)
        timings["cluster"] = time.perf_counter() - t0

        stage = "tracks"
        t0 = time.perf_counter()
        frame_times = [e.frame_time for e in manifest.frames]
        placements = {t: [] for t in frame_times}  # frame_time -> [(cloud, x, y, radius)]
        if len(m_d) > 0:
            if manifest.tracks is None or not manifest.tracks.exists():
                raise LoadError(
                    "dynamic points exist but the manifest names no annotation file"
                )
            tracks = read_tracks(manifest.tracks)
            model_floor = {}
            for track in tracks:
                group = labelset.by_id(track.label).group
                radius = config.radius_for(group)
                if track.model is None:
                    track = build_model(m_d, track, radius=radius)
                model_floor[track.instance_id] = float(track.model.points[:, 2].min())
                for t, x, y, yaw in interpolate_track(track, frame_times):
                    placed = place_object(track, (x, y, yaw))
                    nz = plane.normal[2]
                    ground_z = plane.height_at(x, y) if abs(nz) > 1e-6 else 0.0
                    shift = ground_z - model_floor[track.instance_id]
                    placed = LabeledPointCloud(
                        placed.points + np.array([0.0, 0.0, shift]),
                        placed.labels,
                        np.full(len(placed), t, dtype=np.uint64),
                    )
                    placements[t].append((placed, x, y, radius))
        timings["tracks"] = time.perf_counter() - t0

        stage = "voxelize"
        t0 = time.perf_counter()
        spec = config.grid_spec()

        def _frame_grid(i):
            entry = manifest.frames[i]
            try:
                residual = m_d.select(m_d.times == np.uint64(entry.frame_time))
                placed_clouds = [p for p, _, _, _ in placements[entry.frame_time]]
                if config.dynamic_mode == "replace" and len(residual) > 0:
                    keep = np.ones(len(residual), dtype=bool)
                    for _, x, y, radius in placements[entry.frame_time]:
                        d2 = (residual.points[:, 0] - x) ** 2 + (residual.points[:, 1] - y) ** 2
                        keep &= d2 >= radius * radius
                    residual = residual.select(keep)
                world = concat_clouds([m_s_refined, residual] + placed_clouds)
                sensor_from_world = frame_poses[i].inverse()
                local = transform_points(world, sensor_from_world)
                grid = vote_voxels(local, spec, labelset)
                return compute_visibility(grid, (0.0, 0.0, 0.0), labelset.free_id)
            except PipelineError:
                raise
            except Exception as e:
                raise PipelineError("voxelize", entry.frame_time, e) from e

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            grids = list(pool.map(_frame_grid, range(len(manifest.frames))))
        timings["voxelize"] = time.perf_counter() - t0

        stage = "write"
        t0 = time.perf_counter()
        per_frame = []
        for entry, grid in zip(manifest.frames, grids):
            frame_id = entry.frame_time
            name = f"{manifest.sequence}_{entry.frame_time:012d}.voxl"
            write_voxel_grid(out_dir / name, grid)
            written.append(out_dir / name)
            occ = float((grid.labels != labelset.free_id).mean())
            per_frame.append(
                {"frame_time": entry.frame_time, "grid": name, "occupancy_fraction": occ}
            )
        frame_id = None
        timings["write"] = time.perf_counter() - t0

        report = {
            "version": FORMAT_VERSION,
            "sequence": manifest.sequence,
            "frames": len(manifest.frames),
            "stage_seconds": timings,
            "points": {
                "total": int(len(m_s) + len(m_d)),
                "static": int(len(m_s)),
                "dynamic": int(len(m_d)),
                "ground": int(len(m_g)),
                "non_ground": int(len(m_non_g)),
            },
            "per_frame": per_frame,
        }
        (out_dir / f"{manifest.sequence}.report.json").write_text(json.dumps(report, indent=2))
        return report
    except Exception as e:
        for path in written:
            Path(path).unlink(missing_ok=True)
        if isinstance(e, PipelineError):
            raise
        raise PipelineError(stage, frame_id, e) from e
