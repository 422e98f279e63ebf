"""Event-stream parsing and the four tensor representations.

Representations over a time window [t_start, t_end]:
  rasterized  - per-polarity event counts plus the window-normalized timestamp
                of the latest event per pixel (4 channels)
  frame       - signed per-pixel event sum (1 channel)
  timesurface - per-polarity exponential decay of the latest event age
                (2 channels)
  hats        - cell-averaged time surface over CxC cells (2 channels)

All tensors are float64, channel-major (channels, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError, ValidationError

EVENT_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
EVENT_RECORD_SIZE = 13

DEFAULT_TAU_US = 50_000.0
DEFAULT_HATS_CELL = 8

KINDS = ("rasterized", "frame", "timesurface", "hats")


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int

    def __post_init__(self):
        if self.polarity not in (1, -1):
            raise ValidationError(f"polarity must be +1 or -1, got {self.polarity}")


class EventStream:
    """Time-sorted events with sensor geometry and the covered time window."""

    __slots__ = ("t", "x", "y", "polarity", "width", "height", "window")

    def __init__(self, t, x, y, polarity, width: int, height: int, window=None):
        t = np.asarray(t, dtype=np.uint64).reshape(-1)
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        polarity = np.asarray(polarity, dtype=np.int8).reshape(-1)
        n = len(t)
        if not (len(x) == len(y) == len(polarity) == n):
            raise ValidationError("event field arrays differ in length")
        if n and (np.diff(t.astype(np.int64)) < 0).any():
            i = int(np.nonzero(np.diff(t.astype(np.int64)) < 0)[0][0])
            raise ValidationError(
                f"timestamps must be non-decreasing; first violation at event {i + 1} "
                f"({int(t[i + 1])} < {int(t[i])})"
            )
        if n and ((x < 0) | (x >= width) | (y < 0) | (y >= height)).any():
            raise ValidationError("event coordinates outside the sensor")
        if n and (~np.isin(polarity, (-1, 1))).any():
            raise ValidationError("polarities must be +1 or -1")
        if window is None:
            window = (int(t[0]), int(t[-1])) if n else (0, 0)
        window = (int(window[0]), int(window[1]))
        if window[1] < window[0]:
            raise ValidationError(f"window end {window[1]} before start {window[0]}")
        if n and ((t < window[0]) | (t > window[1])).any():
            raise ValidationError("events outside the declared window")
        self.t, self.x, self.y, self.polarity = t, x, y, polarity
        self.width, self.height = int(width), int(height)
        self.window = window

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, width: int, height: int, window=(0, 0)) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, width, height, window)


def parse_events(payload: bytes, width: int, height: int, window=None) -> EventStream:
    """Decode 13-byte little-endian records (t: u64 us, x: u16, y: u16, p: u8 {0,1})."""
    if len(payload) % EVENT_RECORD_SIZE:
        raise ParseError(
            f"truncated event record at byte {len(payload) - len(payload) % EVENT_RECORD_SIZE}",
            offset=len(payload) - len(payload) % EVENT_RECORD_SIZE,
        )
    rec = np.frombuffer(payload, dtype=EVENT_RECORD)
    if len(rec) and (~np.isin(rec["p"], (0, 1))).any():
        bad = int(np.nonzero(~np.isin(rec["p"], (0, 1)))[0][0])
        raise ParseError(
            f"invalid polarity byte {int(rec['p'][bad])} in record {bad}",
            offset=bad * EVENT_RECORD_SIZE,
        )
    polarity = rec["p"].astype(np.int8) * 2 - 1
    return EventStream(rec["t"], rec["x"], rec["y"], polarity, width, height, window)


def encode_events(stream: EventStream) -> bytes:
    rec = np.empty(len(stream), dtype=EVENT_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = (stream.polarity > 0).astype(np.uint8)
    return rec.tobytes()


class EventTensor:
    __slots__ = ("channels", "data")

    def __init__(self, channels, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != len(channels):
            raise ValidationError(f"tensor shape {data.shape} does not match {len(channels)} channels")
        if not np.isfinite(data).all():
            raise ValidationError("tensor contains non-finite values")
        self.channels = tuple(channels)
        self.data = data

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


def _latest_per_pixel(stream: EventStream, positive: bool):
    """(has_event, latest_t) per pixel for one polarity."""
    h, w = stream.height, stream.width
    latest = np.zeros((h, w), dtype=np.uint64)
    has = np.zeros((h, w), dtype=bool)
    sel = stream.polarity > 0 if positive else stream.polarity < 0
    ys, xs, ts = stream.y[sel], stream.x[sel], stream.t[sel]
    np.maximum.at(latest, (ys, xs), ts)
    has[ys, xs] = True
    return has, latest


def _time_surface(stream: EventStream, tau: float) -> np.ndarray:
    t_end = stream.window[1]
    out = np.zeros((2, stream.height, stream.width))
    for ch, positive in enumerate((True, False)):
        has, latest = _latest_per_pixel(stream, positive)
        age = (np.float64(t_end) - latest.astype(np.float64))
        out[ch][has] = np.exp(-age[has] / tau)
    return out


def build_representation(stream: EventStream, kind: str, **params) -> EventTensor:
    """Build one of the four event tensors; see the module docstring."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown representation {kind!r}; expected one of {KINDS}")
    h, w = stream.height, stream.width
    t0, t1 = stream.window

    if kind == "rasterized":
        span = float(t1 - t0)
        counts = np.zeros((2, h, w))
        stamps = np.zeros((2, h, w))
        for ch, positive in enumerate((True, False)):
            sel = stream.polarity > 0 if positive else stream.polarity < 0
            np.add.at(counts[ch], (stream.y[sel], stream.x[sel]), 1.0)
            has, latest = _latest_per_pixel(stream, positive)
            if span > 0:
                stamps[ch][has] = (latest[has].astype(np.float64) - t0) / span
            else:
                stamps[ch][has] = 1.0
        data = np.concatenate([counts, stamps])
        return EventTensor(("pos_count", "neg_count", "pos_time", "neg_time"), data)

    if kind == "frame":
        frame = np.zeros((h, w))
        np.add.at(frame, (stream.y, stream.x), stream.polarity.astype(np.float64))
        return EventTensor(("polarity_sum",), frame[None])

    tau = float(params.get("tau", DEFAULT_TAU_US))
    if tau <= 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    surface = _time_surface(stream, tau)
    if kind == "timesurface":
        return EventTensor(("ts_pos", "ts_neg"), surface)

    cell = int(params.get("cell", DEFAULT_HATS_CELL))
    if cell < 1:
        raise ConfigurationError(f"hats cell must be >= 1, got {cell}")
    if h % cell or w % cell:
        raise ConfigurationError(f"hats cell {cell} does not divide {w}x{h}")
    blocks = surface.reshape(2, h // cell, cell, w // cell, cell).mean(axis=(2, 4))
    if params.get("resolution", "broadcast") == "cells":
        return EventTensor(("hats_pos", "hats_neg"), blocks)
    broadcast = np.repeat(np.repeat(blocks, cell, axis=1), cell, axis=2)
    return EventTensor(("hats_pos", "hats_neg"), broadcast)
