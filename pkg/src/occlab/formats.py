"""File formats. Everything binary is little-endian.

point cloud      raw records of 4 float32 (x, y, z, intensity); labeled
                 variants reuse the intensity slot for the label id
point times      raw uint64 microseconds, one per point
poses            text, 12 reals per line: row-major 3x4 world-from-sensor
semantic image   raw uint8 label ids plus a JSON sidecar with dimensions
events           header (magic EVTS, version, sensor size, window) followed
                 by 13-byte records (t: u64, x: u16, y: u16, polarity: u8)
voxel grid       header (magic VOXG, version, dims, bounds, voxel size),
                 labels as u16 x-fastest, mask as u8 (bit0 valid, bit1 occluded)
tensor           magic TNSR, version, ndim, dims, float64 payload (C order)
tracks/manifest/config/report   JSON with a `version` field

Binary readers reject wrong magic or version; JSON readers reject missing or
mismatched `version`.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .core import LabeledPointCloud, LabelSet, Pose, SemanticLabel
from .errors import LoadError, ParseError
from .events import EventStream, encode_events, parse_events
from .projection import CameraModel, SemanticImage
from .tracks import InstanceTrack, Keyframe
from .voxel import VoxelGrid, grid_from_bounds

FORMAT_VERSION = 1

EVENTS_MAGIC = b"EVTS"
EVENTS_HEADER = struct.Struct("<4sHHHQQ")
VOXEL_MAGIC = b"VOXG"
VOXEL_HEADER = struct.Struct("<4sHIII6dd")
TENSOR_MAGIC = b"TNSR"
TENSOR_HEADER = struct.Struct("<4sHH")


def _check_version(kind: str, got: int):
    if got != FORMAT_VERSION:
        raise ParseError(f"{kind}: unsupported version {got} (expected {FORMAT_VERSION})")


def _check_magic(kind: str, got: bytes, expected: bytes):
    if got != expected:
        raise ParseError(f"{kind}: bad magic {got!r}")


# -- point clouds -------------------------------------------------------------

def write_point_cloud(path, points, fourth=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((len(points), 4), dtype="<f4")
    rec[:, :3] = points
    if fourth is not None:
        rec[:, 3] = np.asarray(fourth, dtype=np.float64)
    Path(path).write_bytes(rec.tobytes())


def read_point_cloud(path):
    """Returns (points (n,3) float64, fourth-channel (n,) float64)."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise ParseError(f"{path}: truncated point record at byte {len(raw) - len(raw) % 16}",
                         offset=len(raw) - len(raw) % 16)
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return rec[:, :3].astype(np.float64), rec[:, 3].astype(np.float64)


def write_point_times(path, times):
    Path(path).write_bytes(np.asarray(times, dtype="<u8").tobytes())


def read_point_times(path):
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise ParseError(f"{path}: truncated time record")
    return np.frombuffer(raw, dtype="<u8").astype(np.uint64)


def write_labeled_cloud(path, cloud: LabeledPointCloud):
    write_point_cloud(path, cloud.points, fourth=cloud.labels)
    write_point_times(str(path) + ".times", cloud.times)


def read_labeled_cloud(path) -> LabeledPointCloud:
    points, fourth = read_point_cloud(path)
    labels = np.round(fourth).astype(np.uint16)
    times_path = Path(str(path) + ".times")
    if times_path.exists():
        times = read_point_times(times_path)
    else:
        times = np.zeros(len(points), dtype=np.uint64)
    return LabeledPointCloud(points, labels, times)


# -- poses --------------------------------------------------------------------

def write_poses(path, poses):
    lines = []
    for p in poses:
        m = np.hstack([p.rotation, p.translation[:, None]])
        lines.append(" ".join(repr(float(v)) for v in m.reshape(-1)))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_poses(path):
    poses = []
    for ln, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 12:
            raise ParseError(f"{path}:{ln + 1}: expected 12 values, got {len(vals)}")
        m = np.array(vals).reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


# -- semantic images ----------------------------------------------------------

def write_semantic_image(path, img: SemanticImage):
    Path(path).write_bytes(img.label_ids.astype(np.uint8).tobytes())
    sidecar = {"version": FORMAT_VERSION, "width": img.width, "height": img.height}
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def read_semantic_image(path) -> SemanticImage:
    meta = _read_json(str(path) + ".json", "semantic image sidecar")
    w, h = int(meta["width"]), int(meta["height"])
    raw = Path(path).read_bytes()
    if len(raw) != w * h:
        raise ParseError(f"{path}: expected {w * h} bytes for {w}x{h}, got {len(raw)}")
    ids = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.uint16)
    return SemanticImage(ids)


# -- rgb images (raw float in [0,1] stored as u8) ------------------------------

def write_rgb_image(path, img):
    img = np.asarray(img, dtype=np.float64)
    data = np.round(img * 255.0).astype(np.uint8)
    Path(path).write_bytes(data.tobytes())
    sidecar = {"version": FORMAT_VERSION, "width": img.shape[1], "height": img.shape[0]}
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def read_rgb_image(path):
    meta = _read_json(str(path) + ".json", "image sidecar")
    w, h = int(meta["width"]), int(meta["height"])
    raw = Path(path).read_bytes()
    if len(raw) != w * h * 3:
        raise ParseError(f"{path}: expected {w * h * 3} bytes for {w}x{h}x3, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


# -- events -------------------------------------------------------------------

def write_events(path, stream: EventStream):
    header = EVENTS_HEADER.pack(
        EVENTS_MAGIC, FORMAT_VERSION, stream.width, stream.height,
        stream.window[0], stream.window[1],
    )
    Path(path).write_bytes(header + encode_events(stream))


def read_events(path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < EVENTS_HEADER.size:
        raise ParseError(f"{path}: missing event header")
    magic, version, width, height, t0, t1 = EVENTS_HEADER.unpack_from(raw)
    _check_magic("events", magic, EVENTS_MAGIC)
    _check_version("events", version)
    return parse_events(raw[EVENTS_HEADER.size:], width, height, (t0, t1))


# -- voxel grids ----------------------------------------------------------------

def write_voxel_grid(path, grid: VoxelGrid):
    spec = grid.spec
    header = VOXEL_HEADER.pack(
        VOXEL_MAGIC, FORMAT_VERSION, *spec.dims,
        *spec.min_corner.tolist(), *spec.max_corner.tolist(), spec.voxel,
    )
    labels = grid.labels.astype("<u2").ravel(order="F")
    mask = (grid.valid.astype(np.uint8) | (grid.occluded.astype(np.uint8) << 1)).ravel(order="F")
    Path(path).write_bytes(header + labels.tobytes() + mask.tobytes())


def read_voxel_grid(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < VOXEL_HEADER.size:
        raise ParseError(f"{path}: missing voxel grid header")
    fields = VOXEL_HEADER.unpack_from(raw)
    magic, version = fields[0], fields[1]
    _check_magic("voxel grid", magic, VOXEL_MAGIC)
    _check_version("voxel grid", version)
    nx, ny, nz = fields[2:5]
    bounds = fields[5:11]
    voxel = fields[11]
    spec = grid_from_bounds(bounds[:3], bounds[3:], voxel)
    if spec.dims != (nx, ny, nz):
        raise ParseError(f"{path}: dims {(nx, ny, nz)} disagree with bounds/voxel")
    n = nx * ny * nz
    need = VOXEL_HEADER.size + 2 * n + n
    if len(raw) != need:
        raise ParseError(f"{path}: expected {need} bytes, got {len(raw)}")
    off = VOXEL_HEADER.size
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off)
    mask = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off + 2 * n)
    shape = (nx, ny, nz)
    return VoxelGrid(
        spec,
        labels.reshape(shape, order="F"),
        (mask & 1).astype(bool).reshape(shape, order="F"),
        ((mask >> 1) & 1).astype(bool).reshape(shape, order="F"),
    )


# -- tensors --------------------------------------------------------------------

def write_tensor(path, data):
    data = np.asarray(data, dtype=np.float64)
    header = TENSOR_HEADER.pack(TENSOR_MAGIC, FORMAT_VERSION, data.ndim)
    dims = struct.pack(f"<{data.ndim}I", *data.shape)
    Path(path).write_bytes(header + dims + data.astype("<f8").tobytes())


def read_tensor(path):
    raw = Path(path).read_bytes()
    if len(raw) < TENSOR_HEADER.size:
        raise ParseError(f"{path}: missing tensor header")
    magic, version, ndim = TENSOR_HEADER.unpack_from(raw)
    _check_magic("tensor", magic, TENSOR_MAGIC)
    _check_version("tensor", version)
    dims = struct.unpack_from(f"<{ndim}I", raw, TENSOR_HEADER.size)
    off = TENSOR_HEADER.size + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(raw) != off + 8 * count:
        raise ParseError(f"{path}: tensor payload size mismatch")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims).copy()


# -- JSON-backed formats ---------------------------------------------------------

def _read_json(path, kind):
    p = Path(path)
    if not p.exists():
        raise LoadError(f"{kind} file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e
    _check_version(kind, doc.get("version", -1))
    return doc


def write_label_set(path, labelset: LabelSet):
    doc = {
        "version": FORMAT_VERSION,
        "labels": [
            {"id": l.id, "name": l.name, "group": l.group, "dynamic": l.dynamic}
            for l in labelset
        ],
    }
    if labelset.frequency:
        doc["frequency"] = labelset.frequency
    Path(path).write_text(json.dumps(doc, indent=2))


def read_label_set(path) -> LabelSet:
    doc = _read_json(path, "label set")
    labels = [
        SemanticLabel(int(l["id"]), l["name"], l["group"], bool(l.get("dynamic", False)))
        for l in doc["labels"]
    ]
    return LabelSet(labels, frequency=doc.get("frequency"))


def write_calibration(path, cam: CameraModel):
    m = np.hstack([cam.cam_from_lidar.rotation, cam.cam_from_lidar.translation[:, None]])
    doc = {
        "version": FORMAT_VERSION,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "cam_from_lidar": m.reshape(-1).tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_calibration(path) -> CameraModel:
    doc = _read_json(path, "calibration")
    m = np.array(doc["cam_from_lidar"], dtype=np.float64).reshape(3, 4)
    return CameraModel(
        doc["fx"], doc["fy"], doc["cx"], doc["cy"],
        int(doc["width"]), int(doc["height"]),
        Pose(m[:, :3], m[:, 3]),
    )


def tracks_to_doc(tracks) -> dict:
    out = []
    for t in tracks:
        entry = {
            "instance_id": t.instance_id,
            "label": t.label,
            "keyframes": [
                {"frame_time": k.frame_time, "x": k.x, "y": k.y, "yaw": k.yaw}
                for k in t.keyframes
            ],
        }
        if t.model is not None:
            entry["model"] = {
                "points": t.model.points.tolist(),
                "labels": t.model.labels.tolist(),
                "times": t.model.times.tolist(),
            }
        out.append(entry)
    return {"version": FORMAT_VERSION, "tracks": out}


def tracks_from_doc(doc) -> list:
    _check_version("tracks", doc.get("version", -1))
    tracks = []
    for entry in doc["tracks"]:
        model = None
        if "model" in entry:
            m = entry["model"]
            model = LabeledPointCloud(
                np.array(m["points"], dtype=np.float64).reshape(-1, 3),
                m["labels"], m["times"],
            )
        tracks.append(
            InstanceTrack(
                int(entry["instance_id"]),
                int(entry["label"]),
                tuple(
                    Keyframe(int(k["frame_time"]), k["x"], k["y"], k["yaw"])
                    for k in entry["keyframes"]
                ),
                model,
            )
        )
    return tracks


def write_tracks(path, tracks):
    Path(path).write_text(json.dumps(tracks_to_doc(tracks), indent=2))


def read_tracks(path) -> list:
    return tracks_from_doc(_read_json(path, "tracks"))


# -- PNG (writer only; the annotation UI decodes in the browser) -----------------

def encode_png(rgb: np.ndarray) -> bytes:
    """Minimal RGB8 PNG encoder (filter 0, single IDAT)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(h))

    def chunk(tag, payload):
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )
