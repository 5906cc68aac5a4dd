"""Local surrogate explanations for image classifiers.

The procedure: segment the image, draw binary masks over segments (row 0
is the unperturbed instance), build fudged images where masked-off
segments collapse to their mean color, score them with the black-box
classifier, weight each sample by an exponential kernel over cosine
distance to the all-ones mask, and fit a weighted ridge model whose
coefficients rank the segments.  The intercept is never penalized, so a
constant classifier comes out with exactly zero coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import DataError
from .rng import RandomStream
from .slic import SegmentMap, SlicParams, slic_segment

DEFAULT_N_SAMPLES = 1000
DEFAULT_SIGMA = 0.25
DEFAULT_ALPHA = 1.0
_PREDICT_BATCH = 125


def sample_masks(n_segments: int, n_samples: int, stream: RandomStream) -> np.ndarray:
    """(n_samples, n_segments) binary matrix; row 0 all ones, rest Bernoulli(0.5)."""
    if n_samples < 2:
        raise DataError(f"need at least 2 samples, got {n_samples}")
    if n_segments < 1:
        raise DataError(f"need at least 1 segment, got {n_segments}")
    masks = np.empty((n_samples, n_segments), dtype=np.uint8)
    masks[0] = 1
    masks[1:] = stream.bernoulli(0.5, size=(n_samples - 1, n_segments)).astype(np.uint8)
    return masks


def segment_mean_image(image: np.ndarray, seg: SegmentMap) -> np.ndarray:
    """Piecewise-constant image where every segment is its mean color."""
    img = np.asarray(image, dtype=np.float64)
    flat_ids = seg.seg_of.ravel()
    s = seg.n_segments
    counts = np.bincount(flat_ids, minlength=s).astype(np.float64)
    means = np.empty((s, img.shape[2]), dtype=np.float64)
    for c in range(img.shape[2]):
        sums = np.bincount(flat_ids, weights=img[..., c].ravel(), minlength=s)
        means[:, c] = sums / counts
    return means[seg.seg_of]


def perturb(image: np.ndarray, seg: SegmentMap, mask: np.ndarray) -> np.ndarray:
    """Keep segments where mask is 1; replace the rest with their mean color."""
    mask = np.asarray(mask)
    if mask.shape != (seg.n_segments,):
        raise DataError(
            f"mask length {mask.shape} does not match segment count {seg.n_segments}"
        )
    img = np.asarray(image, dtype=np.float64)
    mean_img = segment_mean_image(img, seg)
    keep = mask.astype(bool)[seg.seg_of]
    return np.where(keep[..., None], img, mean_img)


def _perturb_batch(image: np.ndarray, mean_image: np.ndarray, seg: SegmentMap,
                   masks: np.ndarray) -> np.ndarray:
    keep = masks.astype(bool)[:, seg.seg_of]  # (B, H, W)
    return np.where(keep[..., None], image[None], mean_image[None])


def kernel_weights(masks: np.ndarray, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """w_i = exp(-d_i^2 / sigma^2), d_i = cosine distance of row i to all-ones.

    A zero row has no direction; its distance is defined as 1.
    """
    if sigma <= 0:
        raise DataError(f"kernel width must be positive, got {sigma}")
    m = np.asarray(masks, dtype=np.float64)
    if m.ndim != 2:
        raise DataError(f"mask matrix must be 2-D, got shape {m.shape}")
    s = m.shape[1]
    ones_norm = np.sqrt(s)
    row_norms = np.sqrt((m * m).sum(axis=1))
    dots = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = dots / (row_norms * ones_norm)
    d = 1.0 - cos
    d[row_norms == 0] = 1.0
    return np.exp(-(d * d) / (sigma * sigma))


@dataclass
class SurrogateFit:
    coefficients: np.ndarray  # (S,)
    intercept: float
    r2: float
    alpha: float


def fit_surrogate(masks: np.ndarray, responses: np.ndarray, weights: np.ndarray,
                  alpha: float = DEFAULT_ALPHA) -> SurrogateFit:
    """Weighted ridge regression of responses on mask columns.

    Solves (X^T W X + alpha * D) beta = X^T W y where X carries a leading
    intercept column and D is the identity with a zero in the intercept
    slot, then reports the weighted R^2 against the weighted mean.
    """
    z = np.asarray(masks, dtype=np.float64)
    y = np.asarray(responses, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if z.ndim != 2:
        raise DataError(f"mask matrix must be 2-D, got shape {z.shape}")
    n, s = z.shape
    if y.shape != (n,) or w.shape != (n,):
        raise DataError(
            f"responses {y.shape} and weights {w.shape} must both be length {n}"
        )
    if np.any(w <= 0):
        raise DataError("sample weights must be positive")
    if alpha < 0:
        raise DataError(f"ridge strength must be non-negative, got {alpha}")

    x = np.column_stack([np.ones(n), z])
    xtw = x.T * w
    a = xtw @ x
    a[1:, 1:] += alpha * np.eye(s)
    b = xtw @ y
    try:
        beta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"surrogate system is singular: {exc}") from exc

    y_hat = x @ beta
    w_mean = float((w * y).sum() / w.sum())
    sse = float((w * (y - y_hat) ** 2).sum())
    sst = float((w * (y - w_mean) ** 2).sum())
    r2 = 1.0 if sst == 0.0 else 1.0 - sse / sst
    return SurrogateFit(
        coefficients=beta[1:], intercept=float(beta[0]), r2=r2, alpha=float(alpha)
    )


@dataclass
class Explanation:
    target_label: int
    confidence: float
    segment_weights: List[Tuple[int, float]]  # descending coefficient, id tiebreak
    r2: float
    intercept: float
    seed: dict
    params: dict

    def ranked_segments(self) -> List[int]:
        return [sid for sid, _ in self.segment_weights]

    def to_dict(self) -> dict:
        return {
            "target_label": self.target_label,
            "confidence": self.confidence,
            "segment_weights": [[sid, coef] for sid, coef in self.segment_weights],
            "r2": self.r2,
            "intercept": self.intercept,
            "seed": self.seed,
            "params": self.params,
        }


def explain(image: np.ndarray, classifier, slic_params: SlicParams,
            n_samples: int = DEFAULT_N_SAMPLES, sigma: float = DEFAULT_SIGMA,
            alpha: float = DEFAULT_ALPHA, stream: Optional[RandomStream] = None,
            seg: Optional[SegmentMap] = None,
            batch_size: int = _PREDICT_BATCH) -> Explanation:
    """Run the full pipeline on one image.

    ``seg`` short-circuits segmentation when the caller already has the
    (deterministic) SegmentMap for this image; passing it changes nothing
    else about the result.
    """
    if stream is None:
        stream = RandomStream(0)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if seg is None:
        seg = slic_segment(img, slic_params)

    base = classifier.predict_proba(img[None].astype(np.float32))
    base = np.asarray(base, dtype=np.float64)
    if base.ndim != 2 or base.shape[0] != 1:
        raise DataError(f"classifier returned shape {base.shape} for a 1-image batch")
    target = int(np.argmax(base[0]))
    confidence = float(base[0, target])

    s = seg.n_segments
    masks = sample_masks(s, n_samples, stream)
    mean_img = segment_mean_image(img, seg)
    responses = np.empty(n_samples, dtype=np.float64)
    for start in range(0, n_samples, batch_size):
        chunk = masks[start : start + batch_size]
        batch = _perturb_batch(img, mean_img, seg, chunk).astype(np.float32)
        out = np.asarray(classifier.predict_proba(batch), dtype=np.float64)
        if out.shape[0] != chunk.shape[0]:
            raise DataError(
                f"classifier returned {out.shape[0]} rows for a {chunk.shape[0]}-image batch"
            )
        responses[start : start + chunk.shape[0]] = out[:, target]

    weights = kernel_weights(masks, sigma)
    fit = fit_surrogate(masks, responses, weights, alpha)
    order = sorted(range(s), key=lambda i: (-fit.coefficients[i], i))
    ranked = [(int(i), float(fit.coefficients[i])) for i in order]

    params = {
        "segmentation": slic_params.to_dict(),
        "n_samples": n_samples,
        "sigma": sigma,
        "alpha": alpha,
    }
    return Explanation(
        target_label=target,
        confidence=confidence,
        segment_weights=ranked,
        r2=fit.r2,
        intercept=fit.intercept,
        seed=stream.describe(),
        params=params,
    )
