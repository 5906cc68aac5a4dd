"""Stochastic augmentation pipeline.

Each sample is transformed by, in fixed order: vertical flip, horizontal
flip, a transpose gated on a uniform draw exceeding 0.75, photometric
jitter (brightness, saturation, contrast), and a random crop resized
back to 299x299.  All randomness comes from a RandomStream, and every
op draws exactly once per knob whether or not it fires, so the sequence
of draws per sample is fixed:

    u_flip_v, u_flip_h, u_transpose, brightness, saturation, contrast,
    crop_size, crop_top, crop_left

which makes outputs reproducible from (seed, sample index) alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DataError
from .imageops import bilinear_resize, luminance
from .imagestore import TARGET_HEIGHT, TARGET_WIDTH
from .rng import RandomStream

TRANSPOSE_THRESHOLD = 0.75


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for augment_sample; the transpose threshold is not one of them."""

    p_flip_v: float = 0.5
    p_flip_h: float = 0.5
    brightness_delta: Tuple[float, float] = (-0.1, 0.1)
    saturation_factor: Tuple[float, float] = (0.8, 1.2)
    contrast_factor: Tuple[float, float] = (0.8, 1.2)
    crop_fraction: Tuple[float, float] = (0.8, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_flip_v", "p_flip_h"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DataError(f"{name} must be in [0, 1], got {p}")
        for name in ("brightness_delta", "saturation_factor", "contrast_factor", "crop_fraction"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise DataError(f"{name} range is empty: ({lo}, {hi})")
        lo, hi = self.crop_fraction
        if not (0.0 < lo and hi <= 1.0):
            raise DataError(f"crop_fraction must lie in (0, 1], got ({lo}, {hi})")

    def to_dict(self) -> dict:
        return {
            "p_flip_v": self.p_flip_v,
            "p_flip_h": self.p_flip_h,
            "transpose_threshold": TRANSPOSE_THRESHOLD,
            "brightness_delta": list(self.brightness_delta),
            "saturation_factor": list(self.saturation_factor),
            "contrast_factor": list(self.contrast_factor),
            "crop_fraction": list(self.crop_fraction),
            "seed": self.seed,
        }


def flip_vertical(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t[::-1])


def flip_horizontal(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t[:, ::-1])


def transpose_gate(t: np.ndarray, u: float) -> np.ndarray:
    """Swap the spatial axes when u exceeds 0.75 (strictly); otherwise pass through."""
    if u > TRANSPOSE_THRESHOLD:
        return np.ascontiguousarray(t.transpose(1, 0, 2))
    return t


def photometric(t: np.ndarray, delta: float, saturation: float, contrast: float) -> np.ndarray:
    """Brightness shift, then saturation around per-pixel luma, then
    contrast around the per-channel mean of the current tensor; clamp once."""
    x = t.astype(np.float32, copy=True)
    # Neutral parameters must be bit-exact identities, so skip no-op stages.
    if delta != 0.0:
        x += np.float32(delta)
    if saturation != 1.0:
        gray = luminance(x)[..., None]
        x = gray + np.float32(saturation) * (x - gray)
    if contrast != 1.0:
        mean = x.mean(axis=(0, 1), keepdims=True)
        x = mean + np.float32(contrast) * (x - mean)
    return np.clip(x, 0.0, 1.0)


def crop_resize(t: np.ndarray, top: float, left: float, size: float) -> np.ndarray:
    """Extract the fractional window (top, left, size) and resize to 299x299."""
    h, w = t.shape[:2]
    eps = 1e-9
    if not (0.0 < size <= 1.0 + eps):
        raise ValueError(f"crop size fraction must be in (0, 1], got {size}")
    if top < -eps or left < -eps or top + size > 1.0 + eps or left + size > 1.0 + eps:
        raise ValueError(
            f"crop window (top={top}, left={left}, size={size}) out of bounds"
        )
    r0 = int(np.floor(top * h))
    c0 = int(np.floor(left * w))
    ch = max(1, int(round(size * h)))
    cw = max(1, int(round(size * w)))
    ch = min(ch, h - r0)
    cw = min(cw, w - c0)
    window = t[r0 : r0 + ch, c0 : c0 + cw]
    out = bilinear_resize(window, TARGET_HEIGHT, TARGET_WIDTH)
    return out.astype(np.float32, copy=False)


def augment_sample(t: np.ndarray, stream: RandomStream, cfg: AugmentConfig) -> np.ndarray:
    """Apply the full pipeline to one 299x299x3 tensor in [0, 1]."""
    u_flip_v = stream.uniform()
    u_flip_h = stream.uniform()
    u_transpose = stream.uniform()
    delta = stream.uniform(*cfg.brightness_delta)
    saturation = stream.uniform(*cfg.saturation_factor)
    contrast = stream.uniform(*cfg.contrast_factor)
    size = stream.uniform(*cfg.crop_fraction)
    top = stream.uniform() * (1.0 - size)
    left = stream.uniform() * (1.0 - size)

    x = t
    if u_flip_v < cfg.p_flip_v:
        x = flip_vertical(x)
    if u_flip_h < cfg.p_flip_h:
        x = flip_horizontal(x)
    x = transpose_gate(x, u_transpose)
    x = photometric(x, delta, saturation, contrast)
    x = crop_resize(x, top, left, size)
    return np.clip(x, 0.0, 1.0).astype(np.float32, copy=False)
