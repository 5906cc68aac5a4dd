"""Class weighting and stratified k-fold splitting.

Weights follow w_c = n_samples / (n_classes * count_c).  Folds come from
a within-class shuffle followed by a round-robin deal; the deal pointer
carries over from one class to the next (classes visited in ascending
id order), which is what guarantees the overall fold sizes differ by at
most one as well as the per-class balance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import DataError
from .rng import RandomStream


@dataclass
class ClassWeights:
    weights: Dict[int, float]

    def as_array(self) -> np.ndarray:
        return np.array([self.weights[c] for c in sorted(self.weights)], dtype=np.float64)

    def per_sample(self, labels: np.ndarray) -> np.ndarray:
        return self.as_array()[np.asarray(labels, dtype=np.int64)]


@dataclass
class FoldAssignment:
    k: int
    fold_of: np.ndarray  # (n,) int64, values in 0..k-1
    seed: int

    def __post_init__(self):
        self.fold_of = np.asarray(self.fold_of, dtype=np.int64)
        if self.k < 2:
            raise DataError(f"fold count must be at least 2, got {self.k}")
        if self.fold_of.size and (self.fold_of.min() < 0 or self.fold_of.max() >= self.k):
            raise DataError("fold ids out of range")


def _validated_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or y.size == 0:
        raise DataError("label vector must be a non-empty 1-D sequence")
    if y.min() < 0:
        raise DataError(f"negative class id {y.min()} in label vector")
    return y


def compute_class_weights(labels) -> ClassWeights:
    """Balanced weights, one per class id 0..C-1 with C = max(labels)+1."""
    y = _validated_labels(labels)
    counts = np.bincount(y)
    n_classes = counts.size
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        raise DataError(f"class {int(absent[0])} has no samples")
    n = y.size
    weights = {c: n / (n_classes * int(counts[c])) for c in range(n_classes)}
    return ClassWeights(weights=weights)


def stratified_kfold(labels, k: int, seed: int) -> FoldAssignment:
    """Shuffle each class with the seeded stream, then deal round-robin.

    The fold pointer continues across classes so both the per-class and
    the total fold sizes stay within one of each other.
    """
    y = _validated_labels(labels)
    if k < 2:
        raise DataError(f"fold count must be at least 2, got {k}")
    counts = np.bincount(y)
    present = np.flatnonzero(counts > 0)
    min_count = int(counts[present].min())
    if k > min_count:
        raise DataError(
            f"fold count {k} exceeds the smallest class count {min_count}"
        )
    stream = RandomStream(seed, 0)
    fold_of = np.empty(y.size, dtype=np.int64)
    pointer = 0
    for c in present:
        members = np.flatnonzero(y == c)
        order = members[stream.permutation(members.size)]
        for idx in order:
            fold_of[idx] = pointer
            pointer = (pointer + 1) % k
    return FoldAssignment(k=k, fold_of=fold_of, seed=int(seed))


def fold_split(fa: FoldAssignment, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (train_indices, validation_indices) for fold ``i``."""
    if not 0 <= i < fa.k:
        raise DataError(f"fold id {i} out of range for k={fa.k}")
    validation = np.flatnonzero(fa.fold_of == i)
    train = np.flatnonzero(fa.fold_of != i)
    return train, validation


def stratified_holdout(labels, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Carve round(fraction * n_c) samples per class into a holdout set.

    Returns (holdout_indices, remaining_indices), both sorted ascending.
    """
    y = _validated_labels(labels)
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"holdout fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0:
        return np.empty(0, dtype=np.int64), np.arange(y.size, dtype=np.int64)
    stream = RandomStream(seed, 1)
    hold: List[int] = []
    for c in np.flatnonzero(np.bincount(y) > 0):
        members = np.flatnonzero(y == c)
        n_hold = int(round(fraction * members.size))
        order = members[stream.permutation(members.size)]
        hold.extend(int(v) for v in order[:n_hold])
    hold_idx = np.array(sorted(hold), dtype=np.int64)
    mask = np.ones(y.size, dtype=bool)
    mask[hold_idx] = False
    return hold_idx, np.flatnonzero(mask)


def save_folds(k: int, seed: int, fold_of, path: Path, holdout=None,
               meta: dict | None = None) -> None:
    """Persist an assignment as JSON.

    ``fold_of`` spans every manifest record; holdout samples (if any)
    carry the sentinel -1 there and are listed under ``holdout``.
    """
    obj = {
        "schema_version": 1,
        "k": int(k),
        "seed": int(seed),
        "fold_of": [int(v) for v in fold_of],
        "holdout": [int(v) for v in (holdout if holdout is not None else [])],
    }
    if meta:
        obj["meta"] = meta
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_folds(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"fold file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        k = int(obj["k"])
        fold_of = np.asarray(obj["fold_of"], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed fold file {path}: {exc}") from exc
    obj["k"] = k
    obj["fold_of"] = fold_of
    obj["holdout"] = np.asarray(obj.get("holdout", []), dtype=np.int64)
    return obj
