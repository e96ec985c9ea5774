"""Image preprocessing: two independent random-crop branches plus optional color jitter.

All functions are stateless given an explicit numpy Generator, and operate on
channels-last (B, T, H, W, C) float arrays. Crop origins are drawn once per (branch,
batch item) and shared by all T frames of that sequence, so motion cues inside a
sequence survive while the two branches stay decorrelated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CROP_SOURCE = 72
CROP_TARGET = 64
CROP_MAX_ORIGIN = CROP_SOURCE - CROP_TARGET  # inclusive upper bound 8


@dataclass
class CropSpec:
    source_hw: tuple[int, int]
    target_hw: tuple[int, int]
    origin: tuple[int, int]  # (row, col), each in 0..8


def _check_source(images: np.ndarray) -> None:
    if images.ndim != 5 or images.shape[2] != CROP_SOURCE or images.shape[3] != CROP_SOURCE:
        raise ValueError(
            f"expected (B, T, {CROP_SOURCE}, {CROP_SOURCE}, C) images, got {images.shape}")


def random_crop(images: np.ndarray, rng: np.random.Generator,
                ) -> tuple[np.ndarray, list[CropSpec]]:
    """Crop each sequence at an origin drawn uniformly from {0..8}^2."""
    _check_source(images)
    B, T = images.shape[:2]
    origins = rng.integers(0, CROP_MAX_ORIGIN + 1, size=(B, 2))
    out = np.empty(images.shape[:2] + (CROP_TARGET, CROP_TARGET, images.shape[-1]),
                   dtype=images.dtype)
    specs = []
    for b in range(B):
        r, c = int(origins[b, 0]), int(origins[b, 1])
        out[b] = images[b, :, r:r + CROP_TARGET, c:c + CROP_TARGET]
        specs.append(CropSpec((CROP_SOURCE, CROP_SOURCE), (CROP_TARGET, CROP_TARGET), (r, c)))
    return out, specs


def center_crop(images: np.ndarray) -> np.ndarray:
    """Deterministic crop at origin (4, 4); passes 64x64 inputs through unchanged."""
    if images.shape[-3] == CROP_TARGET and images.shape[-2] == CROP_TARGET:
        return images
    if images.shape[-3] != CROP_SOURCE or images.shape[-2] != CROP_SOURCE:
        raise ValueError(f"expected {CROP_SOURCE}x{CROP_SOURCE} or already-cropped "
                         f"{CROP_TARGET}x{CROP_TARGET} images, got {images.shape}")
    off = CROP_MAX_ORIGIN // 2
    return images[..., off:off + CROP_TARGET, off:off + CROP_TARGET, :]


# RGB <-> YIQ for hue rotation (NTSC weights).
_RGB_TO_YIQ = np.array([[0.299, 0.587, 0.114],
                        [0.596, -0.274, -0.322],
                        [0.211, -0.523, 0.312]])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


def color_jitter(images: np.ndarray, rng: np.random.Generator, strength: float = 1.0,
                 brightness: float = 0.2, contrast: float = 0.2, saturation: float = 0.2,
                 hue: float = 0.05) -> np.ndarray:
    """Per-sequence brightness/contrast/saturation/hue perturbation, clamped to range.

    Input pixels are in [-0.5, 0.5]; strength 0 returns the input untouched (no RNG
    draws either, so downstream streams are unaffected).
    """
    if strength == 0.0:
        return images
    B = images.shape[0]
    db = rng.uniform(-brightness, brightness, size=B) * strength
    dc = rng.uniform(-contrast, contrast, size=B) * strength
    ds = rng.uniform(-saturation, saturation, size=B) * strength
    dh = rng.uniform(-hue, hue, size=B) * strength
    out = np.empty_like(images)
    for b in range(B):
        x = images[b].astype(np.float64) + 0.5
        x = x * (1.0 + db[b])
        m = x.mean()
        x = m + (x - m) * (1.0 + dc[b])
        gray = x @ _RGB_TO_YIQ[0]
        x = gray[..., None] + (x - gray[..., None]) * (1.0 + ds[b])
        theta = 2.0 * np.pi * dh[b]
        rot = np.array([[1.0, 0.0, 0.0],
                        [0.0, np.cos(theta), -np.sin(theta)],
                        [0.0, np.sin(theta), np.cos(theta)]])
        x = x @ (_RGB_TO_YIQ.T @ rot.T @ _YIQ_TO_RGB.T)
        out[b] = (np.clip(x, 0.0, 1.0) - 0.5).astype(images.dtype)
    return out
