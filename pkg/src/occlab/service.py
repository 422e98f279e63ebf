"""HTTP annotation service backing the BEV keyframe editor.

Endpoints (JSON bodies unless noted):
  GET  /sequences                      list sequences
  GET  /sequences/{id}/frames          frame times plus BEV raster geometry and
                                       a base64 trail-occupancy bitmap
  GET  /sequences/{id}/bev/{frame}     rendered BEV raster (PNG): trail in the
                                       green/blue channels, that frame's
                                       dynamic points in red
  GET  /sequences/{id}/tracks          stored annotation payload (ETag)
  PUT  /sequences/{id}/tracks          store payload; If-Match guards against
                                       a second writer (409 on mismatch)
  POST /sequences/{id}/interpolate     per-frame poses for candidate keyframes

Track writes are durable (fsync + atomic rename) before they are
acknowledged; one lock per sequence serializes writers.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import re
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .core import concat_clouds
from .errors import ToolkitError
from .formats import FORMAT_VERSION, encode_png, read_calibration, read_label_set, read_poses, read_semantic_image, tracks_from_doc
from .pipeline import SequenceManifest, _load_frame_cloud
from .projection import accumulate_maps, label_points
from .tracks import InstanceTrack, Keyframe, interpolate_track, rasterize_bev

BEV_CELL = 0.2
BEV_MAX_CELLS = 2048


class _SequenceState:
    def __init__(self, manifest: SequenceManifest):
        self.manifest = manifest
        self.lock = threading.Lock()
        self._bev = None

    @property
    def tracks_path(self) -> Path:
        if self.manifest.tracks is not None:
            return self.manifest.tracks
        return self.manifest.resolve(f"{self.manifest.sequence}.tracks.json")

    def bev(self):
        with self.lock:
            if self._bev is None:
                self._bev = self._build_bev()
            return self._bev

    def _build_bev(self):
        m = self.manifest
        labelset = read_label_set(m.labelset)
        cam = read_calibration(m.calibration)
        poses = read_poses(m.poses)
        split = []
        for entry in m.frames:
            cloud = _load_frame_cloud(m, entry)
            img = read_semantic_image(m.resolve(entry.semantic_image))
            split.append(label_points(cloud, img, cam, labelset))
        frame_poses = [poses[e.pose_index] for e in m.frames]
        _, m_d = accumulate_maps(split, frame_poses)

        src = m_d if len(m_d) else concat_clouds([s for s, _ in split])
        if len(src):
            lo = src.points[:, :2].min(axis=0) - 1.0
            hi = src.points[:, :2].max(axis=0) + 1.0
        else:
            lo, hi = np.array([-10.0, -10.0]), np.array([10.0, 10.0])
        width = min(BEV_MAX_CELLS, max(1, math.ceil((hi[0] - lo[0]) / BEV_CELL)))
        height = min(BEV_MAX_CELLS, max(1, math.ceil((hi[1] - lo[1]) / BEV_CELL)))
        trail = rasterize_bev(m_d, (lo[0], lo[1]), BEV_CELL, width, height)
        return m_d, trail


def _render_bev_png(state: _SequenceState, frame_time: int) -> bytes:
    m_d, trail = state.bev()
    h, w = trail.count.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    occupied = trail.count > 0
    # log-compressed trail in G/B so one stray point is still visible
    shade = np.zeros((h, w))
    shade[occupied] = 64.0 + 40.0 * np.log2(1.0 + trail.count[occupied])
    shade = np.clip(shade, 0, 255).astype(np.uint8)
    img[:, :, 1] = shade
    img[:, :, 2] = shade

    frame_raster = rasterize_bev(
        m_d.select(m_d.times == np.uint64(frame_time)),
        trail.origin, trail.cell, w, h,
    )
    img[:, :, 0] = np.where(frame_raster.count > 0, 255, 0).astype(np.uint8)
    return encode_png(img)


def _etag(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


_EMPTY_TRACKS = json.dumps({"version": FORMAT_VERSION, "tracks": []}).encode()


class AnnotationHandler(BaseHTTPRequestHandler):
    server_version = "occlab-annotate/1"
    states: dict = {}

    def log_message(self, fmt, *args):  # quiet by default
        if os.environ.get("OCCLAB_HTTP_LOG"):
            super().log_message(fmt, *args)

    # -- plumbing --------------------------------------------------------

    def _send(self, status: int, body: bytes, ctype="application/json", headers=None):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, doc: dict, headers=None):
        self._send(status, json.dumps(doc).encode(), headers=headers)

    def _error(self, status: int, message: str):
        self._json(status, {"error": message})

    def _state(self, seq_id: str):
        state = self.states.get(seq_id)
        if state is None:
            self._error(404, f"unknown sequence {seq_id!r}")
        return state

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, If-Match")
        self.send_header("Access-Control-Expose-Headers", "ETag")
        self.end_headers()

    # -- routes ----------------------------------------------------------

    def do_GET(self):
        if self.path == "/sequences":
            doc = {
                "version": FORMAT_VERSION,
                "sequences": [
                    {"id": sid, "frames": len(st.manifest.frames)}
                    for sid, st in sorted(self.states.items())
                ],
            }
            return self._json(200, doc)

        m = re.fullmatch(r"/sequences/([^/]+)/frames", self.path)
        if m:
            state = self._state(m.group(1))
            if state is None:
                return
            _, trail = state.bev()
            occupancy = (trail.count > 0).astype(np.uint8).tobytes()
            doc = {
                "version": FORMAT_VERSION,
                "frames": [{"frame_time": e.frame_time} for e in state.manifest.frames],
                "bev": {
                    "origin": [trail.origin[0], trail.origin[1]],
                    "cell": trail.cell,
                    "width": trail.count.shape[1],
                    "height": trail.count.shape[0],
                },
                "trail_occupancy": base64.b64encode(occupancy).decode(),
            }
            return self._json(200, doc)

        m = re.fullmatch(r"/sequences/([^/]+)/bev/(\d+)", self.path)
        if m:
            state = self._state(m.group(1))
            if state is None:
                return
            png = _render_bev_png(state, int(m.group(2)))
            return self._send(200, png, ctype="image/png")

        m = re.fullmatch(r"/sequences/([^/]+)/tracks", self.path)
        if m:
            state = self._state(m.group(1))
            if state is None:
                return
            with state.lock:
                data = state.tracks_path.read_bytes() if state.tracks_path.exists() else _EMPTY_TRACKS
            return self._send(200, data, headers={"ETag": _etag(data)})

        self._error(404, f"no route for {self.path}")

    def do_PUT(self):
        m = re.fullmatch(r"/sequences/([^/]+)/tracks", self.path)
        if not m:
            return self._error(404, f"no route for {self.path}")
        state = self._state(m.group(1))
        if state is None:
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            tracks_from_doc(json.loads(body))
        except (ToolkitError, ValueError, KeyError, TypeError) as e:
            return self._error(400, f"invalid tracks payload: {e}")

        if_match = self.headers.get("If-Match")
        with state.lock:
            path = state.tracks_path
            if path.exists():
                current = _etag(path.read_bytes())
                if if_match != current:
                    return self._json(
                        409,
                        {"error": "tracks changed by another writer", "etag": current},
                    )
            fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as f:
                    f.write(body)
                    f.flush()
                    os.fsync(f.fileno())
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
            return self._send(204, b"", headers={"ETag": _etag(body)})

    def do_POST(self):
        m = re.fullmatch(r"/sequences/([^/]+)/interpolate", self.path)
        if not m:
            return self._error(404, f"no route for {self.path}")
        state = self._state(m.group(1))
        if state is None:
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            doc = json.loads(self.rfile.read(length))
            keyframes = tuple(
                Keyframe(int(k["frame_time"]), float(k["x"]), float(k["y"]), float(k["yaw"]))
                for k in doc["keyframes"]
            )
            track = InstanceTrack(int(doc.get("instance_id", 0)), int(doc.get("label", 0)), keyframes)
        except (ToolkitError, ValueError, KeyError, TypeError) as e:
            return self._error(400, f"invalid interpolation request: {e}")
        times = [e.frame_time for e in state.manifest.frames]
        poses = interpolate_track(track, times)
        return self._json(
            200,
            {
                "version": FORMAT_VERSION,
                "poses": [
                    {"frame_time": t, "x": x, "y": y, "yaw": yaw} for t, x, y, yaw in poses
                ],
            },
        )


def create_server(manifest_paths, host="127.0.0.1", port=0) -> ThreadingHTTPServer:
    states = {}
    for path in manifest_paths:
        manifest = SequenceManifest.load(path)
        states[manifest.sequence] = _SequenceState(manifest)
    handler = type("BoundHandler", (AnnotationHandler,), {"states": states})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve_annotation(manifest_paths, bind=("127.0.0.1", 8734)):
    server = create_server(manifest_paths, bind[0], bind[1])
    print(f"annotation service listening on http://{bind[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    finally:
        server.server_close()
