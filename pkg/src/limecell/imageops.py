"""Low-level array operations shared by the image modules."""

from __future__ import annotations

import numpy as np


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample ``image`` (H, W[, C]) to (out_h, out_w[, C]) bilinearly.

    Sample positions use half-pixel centers with edge clamping.  Resizing
    to the input dimensions returns an exact copy, and constant images
    stay constant because each axis is interpolated as a lerp.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dimensions must be positive, got {(out_h, out_w)}")
    if image.dtype.kind != "f":
        image = image.astype(np.float64)
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()

    ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(image.dtype if image.dtype.kind == "f" else np.float64)
    wx = (xs - x0).astype(wy.dtype)

    if image.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]

    a = image[np.ix_(y0, x0)]
    b = image[np.ix_(y0, x1)]
    c = image[np.ix_(y1, x0)]
    d = image[np.ix_(y1, x1)]
    top = a + wx * (b - a)
    bottom = c + wx * (d - c)
    return top + wy * (bottom - top)


def batch_bilinear_resize(batch: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (N, H, W, C) batch in one shot.

    Same sampling rule as ``bilinear_resize``; kept separate so batched
    callers avoid per-image index recomputation.
    """
    if batch.ndim != 4:
        raise ValueError(f"expected a 4-D batch, got shape {batch.shape}")
    if batch.dtype.kind != "f":
        batch = batch.astype(np.float64)
    n, h, w, c = batch.shape
    if (h, w) == (out_h, out_w):
        return batch.copy()
    ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(batch.dtype)[None, :, None, None]
    wx = (xs - x0).astype(batch.dtype)[None, None, :, None]
    a = batch[:, y0][:, :, x0]
    b = batch[:, y0][:, :, x1]
    cc = batch[:, y1][:, :, x0]
    d = batch[:, y1][:, :, x1]
    top = a + wx * (b - a)
    bottom = cc + wx * (d - cc)
    return top + wy * (bottom - top)


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an (H, W, 3) array, same dtype rules as the input."""
    return 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]
