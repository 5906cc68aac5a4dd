"""Overlay renderings of segment maps and explanations.

All functions take a float RGB image in [0, 1] plus a SegmentMap and
return uint8 RGB arrays of the same spatial size; ``save_png`` writes
them out.  Region colors derive only from the segment id, so renders
are deterministic.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image

from .explain import Explanation
from .imageops import luminance
from .slic import SegmentMap

_GOLDEN = 0.61803398875
_TINT_OPACITY = 0.4
_HEAT_OPACITY = 0.6
_BOUNDARY_COLOR = (1.0, 1.0, 0.0)
_RED = np.array([1.0, 0.0, 0.0])
_GREEN = np.array([0.0, 1.0, 0.0])


def _hsv_to_rgb(h: float, s: float, v: float) -> Tuple[float, float, float]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def segment_color(seg_id: int) -> np.ndarray:
    """Deterministic, well-spread color for a segment id (golden-angle hue)."""
    hue = (seg_id * _GOLDEN) % 1.0
    return np.array(_hsv_to_rgb(hue, 0.65, 0.95))


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_segments(image: np.ndarray, seg: SegmentMap) -> np.ndarray:
    """Tint each region with its id color at 40% opacity."""
    img = np.asarray(image, dtype=np.float64)
    palette = np.stack([segment_color(i) for i in range(seg.n_segments)])
    tint = palette[seg.seg_of]
    out = (1.0 - _TINT_OPACITY) * img + _TINT_OPACITY * tint
    return to_uint8(out)


def boundary_mask(seg: SegmentMap) -> np.ndarray:
    """Pixels whose right or down neighbor belongs to a different segment."""
    s = seg.seg_of
    mask = np.zeros(s.shape, dtype=bool)
    mask[:, :-1] |= s[:, :-1] != s[:, 1:]
    mask[:-1, :] |= s[:-1, :] != s[1:, :]
    return mask


def render_boundaries(image: np.ndarray, seg: SegmentMap) -> np.ndarray:
    """Overlay inter-segment boundary pixels in yellow."""
    img = np.asarray(image, dtype=np.float64).copy()
    img[boundary_mask(seg)] = _BOUNDARY_COLOR
    return to_uint8(img)


def _top_segments(expl: Explanation, top_k: int) -> Tuple[List[Tuple[int, float]], List[Tuple[int, float]]]:
    positives = [(sid, c) for sid, c in expl.segment_weights if c > 0][:top_k]
    negatives = sorted(
        ((sid, c) for sid, c in expl.segment_weights if c < 0),
        key=lambda t: (t[1], t[0]),
    )[:top_k]
    return positives, negatives


def render_heatmap(image: np.ndarray, seg: SegmentMap, expl: Explanation,
                   positive_only: bool = False, top_k: int = 5) -> np.ndarray:
    """Red tints on the strongest positive segments, green on the most
    negative, opacity scaled by |coefficient| relative to the largest shown.

    With positive_only, everything outside the top positive segments is
    grayscaled and only the red tints are drawn.
    """
    img = np.asarray(image, dtype=np.float64)
    positives, negatives = _top_segments(expl, top_k)
    shown = positives + ([] if positive_only else negatives)
    max_abs = max((abs(c) for _, c in shown), default=0.0)

    if positive_only:
        gray = luminance(img)[..., None].repeat(3, axis=2)
        keep = np.isin(seg.seg_of, [sid for sid, _ in positives])
        base = np.where(keep[..., None], img, gray)
    else:
        base = img.copy()

    out = base.copy()
    if max_abs > 0.0:
        tints = [(sid, c, _RED) for sid, c in positives]
        if not positive_only:
            tints += [(sid, c, _GREEN) for sid, c in negatives]
        for sid, coef, color in tints:
            opacity = _HEAT_OPACITY * abs(coef) / max_abs
            region = seg.seg_of == sid
            out[region] = (1.0 - opacity) * base[region] + opacity * color
    return to_uint8(out)


def save_png(array: np.ndarray, path: Path) -> None:
    if array.dtype != np.uint8:
        raise ValueError(f"expected a uint8 array, got {array.dtype}")
    Image.fromarray(array, mode="RGB").save(Path(path), format="PNG")
