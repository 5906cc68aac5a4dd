"""Superpixel segmentation (SLIC) with deterministic output.

The algorithm is the classic one: seed cluster centers on a regular
grid, nudge each to the lowest-gradient pixel in its 3x3 neighborhood,
then run a windowed k-means in (L, a, b, x, y) space with the combined
distance d = d_lab + (compactness / grid_step) * d_xy.  A final pass
absorbs disconnected fragments into their largest adjacent segment so
every segment is 4-connected.  There is no randomness anywhere: ties
resolve by raster order or by lowest id, so equal inputs always produce
identical maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# sRGB -> XYZ (D65 white), rows X/Y/Z.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class SlicParams:
    n_segments: int = 50
    compactness: float = 10.0
    iterations: int = 10

    def __post_init__(self):
        if self.n_segments < 2:
            raise DataError(f"n_segments must be at least 2, got {self.n_segments}")
        if self.compactness <= 0:
            raise DataError(f"compactness must be positive, got {self.compactness}")
        if self.iterations < 1:
            raise DataError(f"iterations must be at least 1, got {self.iterations}")

    def to_dict(self) -> dict:
        return {
            "algorithm": "slic",
            "n_segments": self.n_segments,
            "compactness": self.compactness,
            "iterations": self.iterations,
        }


@dataclass
class SegmentMap:
    seg_of: np.ndarray  # (H, W) int32, ids 0..n_segments-1
    n_segments: int

    def __post_init__(self):
        self.seg_of = np.asarray(self.seg_of, dtype=np.int32)
        if self.seg_of.ndim != 2:
            raise DataError(f"segment map must be 2-D, got shape {self.seg_of.shape}")
        present = np.unique(self.seg_of)
        if present.size != self.n_segments or present[0] != 0 or present[-1] != self.n_segments - 1:
            raise DataError("segment ids must be exactly 0..S-1 with every id present")

    @property
    def height(self) -> int:
        return self.seg_of.shape[0]

    @property
    def width(self) -> int:
        return self.seg_of.shape[1]


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """sRGB in [0, 1] -> CIELAB (D65)."""
    rgb = np.asarray(image, dtype=np.float64)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _gradient_map(lab: np.ndarray) -> np.ndarray:
    g = np.zeros(lab.shape[:2], dtype=np.float64)
    for c in range(lab.shape[2]):
        gy, gx = np.gradient(lab[..., c])
        g += gy * gy + gx * gx
    return g


def _initial_centers(lab: np.ndarray, n_segments: int) -> np.ndarray:
    """Grid seeding, each seed moved to the lowest-gradient pixel nearby."""
    h, w = lab.shape[:2]
    ny = max(1, int(round(np.sqrt(n_segments * h / w))))
    nx = int(np.ceil(n_segments / ny))
    grad = _gradient_map(lab)
    centers = []
    for i in range(ny):
        for j in range(nx):
            if len(centers) == n_segments:
                break
            cy = int((i + 0.5) * h / ny)
            cx = int((j + 0.5) * w / nx)
            y0, y1 = max(0, cy - 1), min(h, cy + 2)
            x0, x1 = max(0, cx - 1), min(w, cx + 2)
            window = grad[y0:y1, x0:x1]
            dy, dx = np.unravel_index(int(np.argmin(window)), window.shape)
            y, x = y0 + dy, x0 + dx
            centers.append([lab[y, x, 0], lab[y, x, 1], lab[y, x, 2], float(y), float(x)])
    return np.array(centers, dtype=np.float64)


def _assign(lab: np.ndarray, centers: np.ndarray, spatial_scale: float,
            window: int) -> np.ndarray:
    h, w = lab.shape[:2]
    best = np.full((h, w), np.inf)
    label = np.full((h, w), -1, dtype=np.int32)
    yy, xx = np.mgrid[0:h, 0:w]
    for k in range(centers.shape[0]):
        cl, ca, cb, cy, cx = centers[k]
        y0, y1 = max(0, int(cy) - window), min(h, int(cy) + window + 1)
        x0, x1 = max(0, int(cx) - window), min(w, int(cx) + window + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        sub = lab[y0:y1, x0:x1]
        d_lab = np.sqrt(
            (sub[..., 0] - cl) ** 2 + (sub[..., 1] - ca) ** 2 + (sub[..., 2] - cb) ** 2
        )
        d_xy = np.sqrt((yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2)
        d = d_lab + spatial_scale * d_xy
        better = d < best[y0:y1, x0:x1]
        best[y0:y1, x0:x1][better] = d[better]
        label[y0:y1, x0:x1][better] = k
    unassigned = label < 0
    if np.any(unassigned):
        # Pixels outside every search window: brute force against all centers.
        ys, xs = np.nonzero(unassigned)
        pts_lab = lab[ys, xs]
        d_lab = np.sqrt(((pts_lab[:, None, :] - centers[None, :, :3]) ** 2).sum(axis=2))
        d_xy = np.sqrt(
            (ys[:, None] - centers[None, :, 3]) ** 2 + (xs[:, None] - centers[None, :, 4]) ** 2
        )
        label[ys, xs] = np.argmin(d_lab + spatial_scale * d_xy, axis=1)
    return label


def _update_centers(lab: np.ndarray, label: np.ndarray, centers: np.ndarray) -> np.ndarray:
    h, w = lab.shape[:2]
    k = centers.shape[0]
    flat = label.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    new = centers.copy()
    feats = [lab[..., 0], lab[..., 1], lab[..., 2], yy.astype(np.float64), xx.astype(np.float64)]
    nonempty = counts > 0
    for j, f in enumerate(feats):
        sums = np.bincount(flat, weights=f.ravel(), minlength=k)
        new[nonempty, j] = sums[nonempty] / counts[nonempty]
    return new


def _enforce_connectivity(label: np.ndarray) -> np.ndarray:
    """Absorb every non-largest component of each id into the largest
    adjacent segment (ties: smallest id), repeating until all gone."""
    h, w = label.shape
    seg = label.copy()
    comp_map = np.full((h, w), -1, dtype=np.int64)
    orphan_comps = []  # (first_flat_pixel, comp_id)
    comp_pixels = {}
    next_comp = 0
    for s in np.unique(seg):
        mask = seg == s
        lab_map, n_comp = ndimage.label(mask, structure=_FOUR_CONNECTED)
        if n_comp == 0:
            continue
        sizes = ndimage.sum_labels(np.ones_like(lab_map), lab_map, index=range(1, n_comp + 1))
        main = int(np.argmax(sizes)) + 1  # ties: first label, i.e. raster order
        for c in range(1, n_comp + 1):
            comp_id = next_comp
            next_comp += 1
            pix = np.nonzero(lab_map == c)
            comp_map[pix] = comp_id
            if c != main:
                comp_pixels[comp_id] = pix
                first = int(pix[0][0]) * w + int(pix[1][0])
                orphan_comps.append((first, comp_id))

    seg_area = np.bincount(seg.ravel(), minlength=int(seg.max()) + 1).astype(np.int64)
    orphan_comps.sort()
    pending = [cid for _, cid in orphan_comps]
    orphan_flag = np.zeros(next_comp, dtype=bool)
    orphan_flag[pending] = True

    def absorb(cid: int, allow_orphan_neighbors: bool) -> bool:
        ys, xs = comp_pixels[cid]
        neigh_segs = []
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny_, nx_ = ys + dy, xs + dx
            ok = (ny_ >= 0) & (ny_ < h) & (nx_ >= 0) & (nx_ < w)
            ny_, nx_ = ny_[ok], nx_[ok]
            ncomp = comp_map[ny_, nx_]
            keep = ncomp != cid
            if not allow_orphan_neighbors:
                keep &= ~orphan_flag[ncomp]
            if np.any(keep):
                neigh_segs.append(seg[ny_[keep], nx_[keep]])
        if not neigh_segs:
            return False
        ids = np.unique(np.concatenate(neigh_segs))
        target = int(ids[np.lexsort((ids, -seg_area[ids]))[0]])
        old = int(seg[ys[0], xs[0]])
        seg[ys, xs] = target
        seg_area[old] -= ys.size
        seg_area[target] += ys.size
        orphan_flag[cid] = False
        return True

    while pending:
        progressed = False
        still = []
        for cid in pending:
            if absorb(cid, allow_orphan_neighbors=False):
                progressed = True
            else:
                still.append(cid)
        if not progressed and still:
            absorb(still[0], allow_orphan_neighbors=True)
            still = still[1:]
        pending = still

    # Relabel contiguously in order of first raster appearance.
    flat = seg.ravel()
    _, first_pos = np.unique(flat, return_index=True)
    order = flat[np.sort(first_pos)]
    remap = np.full(int(seg.max()) + 1, -1, dtype=np.int32)
    remap[order] = np.arange(order.size, dtype=np.int32)
    return remap[seg]


def slic_segment(image: np.ndarray, params: SlicParams) -> SegmentMap:
    """Segment a float RGB image in [0, 1]; see module docstring."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if params.n_segments > h * w:
        raise DataError(
            f"n_segments={params.n_segments} exceeds pixel count {h * w}"
        )
    lab = rgb_to_lab(img)
    centers = _initial_centers(lab, params.n_segments)
    grid_step = float(np.sqrt(h * w / params.n_segments))
    spatial_scale = params.compactness / grid_step
    window = max(1, int(np.ceil(2.0 * grid_step)))
    label = None
    for _ in range(params.iterations):
        label = _assign(lab, centers, spatial_scale, window)
        centers = _update_centers(lab, label, centers)
    seg = _enforce_connectivity(label)
    n = int(seg.max()) + 1
    return SegmentMap(seg_of=seg, n_segments=n)
