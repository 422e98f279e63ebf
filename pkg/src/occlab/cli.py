"""Command-line surface for the toolkit."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corrupt as corruptions
from . import elm
from .core import LabeledPointCloud, concat_clouds
from .errors import ToolkitError
from .events import build_representation
from .formats import (
    read_calibration,
    read_events,
    read_label_set,
    read_labeled_cloud,
    read_point_cloud,
    read_poses,
    read_rgb_image,
    read_semantic_image,
    read_tracks,
    read_voxel_grid,
    write_labeled_cloud,
    write_rgb_image,
    write_tensor,
    write_voxel_grid,
)
from .metrics import ConfusionMatrix, accumulate, scores
from .pipeline import PipelineConfig, SequenceManifest, run_pipeline
from .projection import accumulate_maps, label_points
from .refine import fit_ground, kmeans_frame, relabel_clusters, vote_voxels
from .service import serve_annotation
from .tracks import interpolate_track
from .voxel import compute_visibility


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def _cmd_project(args):
    labelset = read_label_set(args.labelset)
    cam = read_calibration(args.calib)
    points, _ = read_point_cloud(args.cloud)
    cloud = LabeledPointCloud.single_frame(points, np.zeros(len(points), np.uint16), args.frame_time)
    img = read_semantic_image(args.semantic_image)
    static, dynamic = label_points(cloud, img, cam, labelset)
    write_labeled_cloud(args.out_static, static)
    write_labeled_cloud(args.out_dynamic, dynamic)
    print(f"{len(static)} static points, {len(dynamic)} dynamic points")


def _cmd_map(args):
    manifest = SequenceManifest.load(args.manifest)
    labelset = read_label_set(manifest.labelset)
    cam = read_calibration(manifest.calibration)
    poses = read_poses(manifest.poses)
    split = []
    for entry in manifest.frames:
        points, _ = read_point_cloud(manifest.resolve(entry.cloud))
        cloud = LabeledPointCloud.single_frame(points, np.zeros(len(points), np.uint16), entry.frame_time)
        img = read_semantic_image(manifest.resolve(entry.semantic_image))
        split.append(label_points(cloud, img, cam, labelset))
    m_s, m_d = accumulate_maps(split, [poses[e.pose_index] for e in manifest.frames])
    write_labeled_cloud(args.out_static, m_s)
    write_labeled_cloud(args.out_dynamic, m_d)
    print(f"static map {len(m_s)} points, dynamic map {len(m_d)} points")


def _cmd_refine(args):
    config = _load_config(args)
    labelset = read_label_set(args.labelset)
    m_s = read_labeled_cloud(args.static_map)
    plane, m_g, m_non_g = fit_ground(m_s, config.epsilon, config.ransac_iterations, config.seed)
    chunks = [m_g]
    for i, t in enumerate(np.unique(m_non_g.times)):
        frame_pts = m_non_g.select(m_non_g.times == t)
        k = max(1, round(len(frame_pts) / config.kmeans_divisor))
        clustering = kmeans_frame(frame_pts, k, config.kmeans_max_iters, config.seed + i)
        chunks.append(relabel_clusters(frame_pts, clustering, labelset))
    refined = concat_clouds(chunks)
    write_labeled_cloud(args.out, refined)
    print(
        f"plane normal {plane.normal.round(4).tolist()}, "
        f"{len(m_g)} ground / {len(m_non_g)} non-ground points"
    )


def _cmd_voxelize(args):
    config = _load_config(args)
    labelset = read_label_set(args.labelset)
    cloud = read_labeled_cloud(args.cloud)
    spec = config.grid_spec()
    grid = vote_voxels(cloud, spec, labelset)
    if args.sensor:
        sensor = [float(v) for v in args.sensor.split(",")]
        grid = compute_visibility(grid, sensor, labelset.free_id)
    write_voxel_grid(args.out, grid)
    occ = float((grid.labels != labelset.free_id).mean())
    print(f"grid {spec.dims}, occupancy {occ:.4f}")


def _cmd_tracks_interp(args):
    tracks = read_tracks(args.tracks)
    times = [int(t) for t in args.times.split(",")]
    out = []
    for track in tracks:
        poses = interpolate_track(track, times)
        out.append(
            {
                "instance_id": track.instance_id,
                "poses": [{"frame_time": t, "x": x, "y": y, "yaw": yaw} for t, x, y, yaw in poses],
            }
        )
    print(json.dumps({"version": 1, "tracks": out}, indent=2))


def _cmd_events_raster(args):
    config = _load_config(args)
    stream = read_events(args.events)
    params = {
        "tau": args.tau if args.tau is not None else config.tau_us,
        "cell": args.cell if args.cell is not None else config.hats_cell,
    }
    tensor = build_representation(stream, args.kind, **params)
    write_tensor(args.out, tensor.data)
    print(f"{args.kind}: channels {tensor.channels}, shape {tensor.data.shape}")


def _cmd_corrupt(args):
    img = read_rgb_image(args.image)
    out = corruptions.corrupt_image(img, args.mode, args.severity, args.seed or 0)
    write_rgb_image(args.out, out)
    print(f"{args.mode} severity {args.severity} -> {args.out}")


def _cmd_eval(args):
    labelset = read_label_set(args.labelset)
    cm = ConfusionMatrix(labelset)
    preds = args.pred
    gts = args.gt
    if len(preds) != len(gts):
        raise ToolkitError("need as many --pred as --gt grids")
    for p, g in zip(preds, gts):
        accumulate(read_voxel_grid(p), read_voxel_grid(g), cm)
    result = scores(cm)
    report = {
        "version": 1,
        "iou": result["iou"],
        "per_class_iou": result["per_class_iou"],
        "miou": result["miou"],
        "precision": result["precision"],
        "recall": result["recall"],
        "evaluated_voxels": cm.total,
        "mask_skipped": cm.mask_skipped,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def _cmd_elm_check(args):
    ops = ["fuse_add", "attention", "elm_fuse", "deformable_query"]
    worst = {}
    for op in ops:
        errs = [
            elm.grad_check(op, {"n": args.n, "d": args.d, "W": args.window}, seed)
            for seed in range(args.seeds)
        ]
        worst[op] = max(errs)
        print(f"{op}: max relative gradient error {worst[op]:.3e} over {args.seeds} seeds")
    threshold = {"fuse_add": 1e-9}.get
    failed = [op for op in ops if worst[op] >= (threshold(op) or 1e-5)]
    if failed:
        print(f"FAILED: {failed}")
        return 1
    print("all gradient checks passed")
    return 0


def _cmd_pipeline_run(args):
    config = _load_config(args)
    manifest = SequenceManifest.load(args.manifest)
    report = run_pipeline(manifest, config, args.out, jobs=args.jobs or 1)
    print(json.dumps(report["stage_seconds"], indent=2))
    print(f"{report['frames']} frames -> {args.out}")


def _cmd_annotate_serve(args):
    host, _, port = args.bind.partition(":")
    serve_annotation(args.manifest, (host or "127.0.0.1", int(port or 8734)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="occlab", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", parents=[common], help="label one cloud from a semantic image")
    p.add_argument("--cloud", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--semantic-image", dest="semantic_image", required=True)
    p.add_argument("--labelset", required=True)
    p.add_argument("--frame-time", dest="frame_time", type=int, default=0)
    p.add_argument("--out-static", dest="out_static", required=True)
    p.add_argument("--out-dynamic", dest="out_dynamic", required=True)
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("map", parents=[common], help="aggregate a sequence into static/dynamic maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-static", dest="out_static", required=True)
    p.add_argument("--out-dynamic", dest="out_dynamic", required=True)
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("refine", parents=[common], help="ground split plus per-frame cluster relabeling")
    p.add_argument("--static-map", dest="static_map", required=True)
    p.add_argument("--labelset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("voxelize", parents=[common], help="vote a labeled cloud into a voxel grid")
    p.add_argument("--cloud", required=True)
    p.add_argument("--labelset", required=True)
    p.add_argument("--sensor", help="x,y,z for the visibility mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_voxelize)

    p_tracks = sub.add_parser("tracks", help="track tools")
    sub_tracks = p_tracks.add_subparsers(dest="subcommand", required=True)
    p = sub_tracks.add_parser("interp", parents=[common], help="interpolate track poses")
    p.add_argument("--tracks", required=True)
    p.add_argument("--times", required=True, help="comma-separated microsecond stamps")
    p.set_defaults(func=_cmd_tracks_interp)

    p_events = sub.add_parser("events", help="event tools")
    sub_events = p_events.add_subparsers(dest="subcommand", required=True)
    p = sub_events.add_parser("raster", parents=[common], help="build an event representation tensor")
    p.add_argument("--events", required=True)
    p.add_argument("--kind", choices=("rasterized", "frame", "timesurface", "hats"), default="rasterized")
    p.add_argument("--tau", type=float, default=None, help="decay in microseconds")
    p.add_argument("--cell", type=int, default=None, help="hats cell size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_events_raster)

    p = sub.add_parser("corrupt", parents=[common], help="apply an image degradation")
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=corruptions.MODES, required=True)
    p.add_argument("--severity", type=int, choices=range(1, 6), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--gt", action="append", required=True)
    p.add_argument("--labelset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p_elm = sub.add_parser("elm", help="fusion kernel tools")
    sub_elm = p_elm.add_subparsers(dest="subcommand", required=True)
    p = sub_elm.add_parser("check", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=_cmd_elm_check)

    p_pipe = sub.add_parser("pipeline", help="pipeline tools")
    sub_pipe = p_pipe.add_subparsers(dest="subcommand", required=True)
    p = sub_pipe.add_parser("run", parents=[common], help="run the full label generation pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pipeline_run)

    p_ann = sub.add_parser("annotate", help="annotation tools")
    sub_ann = p_ann.add_subparsers(dest="subcommand", required=True)
    p = sub_ann.add_parser("serve", parents=[common], help="serve the BEV annotation API")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--bind", default="127.0.0.1:8734")
    p.set_defaults(func=_cmd_annotate_serve)

    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except ToolkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return int(result or 0)


if __name__ == "__main__":
    sys.exit(main())
