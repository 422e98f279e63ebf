"""Deterministic image degradations at five severities.

Images are float64 (h, w, 3) in [0, 1]; 8-bit conversion happens at I/O.
Severity parameter tables are fixed artifact constants so outputs are
reproducible bit-for-bit given (mode, severity, seed).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ValidationError

MODES = ("motion_blur", "fog", "brightness", "darkness", "shot_noise")

BLUR_LENGTH = (5, 9, 13, 17, 21)
FOG_BLEND = (0.15, 0.30, 0.45, 0.60, 0.75)
FOG_AIRLIGHT = 0.9
BRIGHTNESS_OFFSET = (0.10, 0.18, 0.26, 0.34, 0.42)
DARKNESS_GAIN = (0.60, 0.48, 0.36, 0.24, 0.12)
SHOT_SCALE = (60.0, 25.0, 12.0, 5.0, 3.0)


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"image must be (h, w, 3), got {img.shape}")
    if (img < 0).any() or (img > 1).any():
        raise ValidationError("image values must lie in [0, 1]")
    return img


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized linear kernel: `length` unit masses splatted bilinearly
    along a line at `angle` through the kernel center."""
    k = np.zeros((length, length))
    c = (length - 1) / 2.0
    for i in range(length):
        r = i - c
        x = c + r * np.cos(angle)
        y = c + r * np.sin(angle)
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        for dy in (0, 1):
            for dx in (0, 1):
                xx, yy = x0 + dx, y0 + dy
                if 0 <= xx < length and 0 <= yy < length:
                    k[yy, xx] += (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
    return k / k.sum()


def corrupt_image(img, mode: str, severity: int, seed: int = 0) -> np.ndarray:
    """Apply one degradation at severity 1..5; deterministic given the seed."""
    img = check_image(img)
    if mode not in MODES:
        raise ConfigurationError(f"unknown corruption {mode!r}; expected one of {MODES}")
    if not 1 <= severity <= 5:
        raise ConfigurationError(f"severity must be in 1..5, got {severity}")
    s = severity - 1
    rng = np.random.default_rng(seed)

    if mode == "motion_blur":
        kernel = motion_blur_kernel(BLUR_LENGTH[s], rng.uniform(0.0, np.pi))
        out = np.stack(
            [ndimage.convolve(img[:, :, ch], kernel, mode="reflect") for ch in range(3)],
            axis=2,
        )
        return np.clip(out, 0.0, 1.0)
    if mode == "fog":
        return img * (1.0 - FOG_BLEND[s]) + FOG_BLEND[s] * FOG_AIRLIGHT
    if mode == "brightness":
        return np.clip(img + BRIGHTNESS_OFFSET[s], 0.0, 1.0)
    if mode == "darkness":
        return np.clip(img * DARKNESS_GAIN[s], 0.0, 1.0)
    # shot_noise
    c = SHOT_SCALE[s]
    return np.clip(rng.poisson(img * c) / c, 0.0, 1.0)
