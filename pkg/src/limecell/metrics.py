"""Binary classification metrics and training-history artifacts.

Decision rule: class 1 is positive and a probability of exactly 0.5
counts as positive.  Degenerate cases follow the usual conventions
(precision/recall/F1 are 0 whenever tp is 0) because the source
formulas are undefined there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from .errors import DataError

EPS_LOGLOSS = 1e-15

HISTORY_COLUMNS = ("epoch", "loss", "accuracy", "f1", "val_loss", "val_accuracy", "val_f1")


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if v < 0:
                raise DataError(f"{name} must be non-negative, got {v}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def check_probability_matrix(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate an (N, M) matrix of class probabilities."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise DataError(f"probability matrix must be 2-D, got shape {p.shape}")
    if p.size and (p.min() < -tol or p.max() > 1 + tol):
        raise DataError("probabilities outside [0, 1]")
    if p.size:
        rows = p.sum(axis=1)
        worst = np.abs(rows - 1.0).max()
        if worst > tol:
            raise DataError(f"probability rows must sum to 1, worst deviation {worst:.3g}")
    return p


def confusion(y_true, p, threshold: float = 0.5) -> ConfusionCounts:
    """Tally TP/FP/TN/FN for the binary task; p_i1 >= threshold predicts 1."""
    p = check_probability_matrix(p)
    y = np.asarray(y_true, dtype=np.int64)
    if y.ndim != 1 or y.size != p.shape[0]:
        raise DataError(
            f"label vector length {y.size} does not match {p.shape[0]} prediction rows"
        )
    if p.shape[1] != 2:
        raise DataError(f"binary task expects 2 probability columns, got {p.shape[1]}")
    pred = p[:, 1] >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise DataError("cannot compute accuracy of zero samples")
    return (c.tp + c.tn) / c.total


def precision(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise DataError("cannot compute precision of zero samples")
    if c.tp == 0:
        return 0.0
    return c.tp / (c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise DataError("cannot compute recall of zero samples")
    if c.tp == 0:
        return 0.0
    return c.tp / (c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise DataError("cannot compute f1 of zero samples")
    if c.tp == 0:
        return 0.0
    p = precision(c)
    r = recall(c)
    return 2.0 * p * r / (p + r)


def log_loss(y_onehot, p, eps: float = EPS_LOGLOSS) -> float:
    """Mean negative log of the clipped true-class probability."""
    p = check_probability_matrix(p)
    y = np.asarray(y_onehot, dtype=np.float64)
    if y.shape != p.shape:
        raise DataError(f"one-hot shape {y.shape} does not match predictions {p.shape}")
    row_sums = y.sum(axis=1)
    if not (np.all((y == 0) | (y == 1)) and np.all(row_sums == 1)):
        raise DataError("labels must be one-hot rows")
    clipped = np.clip(p, eps, 1.0 - eps)
    return float(-(y * np.log(clipped)).sum() / y.shape[0])


def onehot(labels, n_classes: int = 2) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    out = np.zeros((y.size, n_classes), dtype=np.float64)
    out[np.arange(y.size), y] = 1.0
    return out


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    logloss: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "logloss": self.logloss,
        }


def report_from(y_true, p) -> MetricReport:
    c = confusion(y_true, p)
    return MetricReport(
        accuracy=accuracy(c),
        precision=precision(c),
        recall=recall(c),
        f1=f1(c),
        logloss=log_loss(onehot(y_true, np.asarray(p).shape[1]), p),
    )


@dataclass
class TrainingHistory:
    """Per-epoch series; epoch i is stored at list index i-1."""

    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    f1: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    val_f1: List[float] = field(default_factory=list)

    def append(self, loss: float, accuracy: float, f1: float,
               val_loss: float, val_accuracy: float, val_f1: float) -> None:
        self.loss.append(float(loss))
        self.accuracy.append(float(accuracy))
        self.f1.append(float(f1))
        self.val_loss.append(float(val_loss))
        self.val_accuracy.append(float(val_accuracy))
        self.val_f1.append(float(val_f1))

    @property
    def epochs(self) -> int:
        return len(self.loss)

    def series(self) -> Dict[str, List[float]]:
        return {
            "loss": self.loss,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "val_f1": self.val_f1,
        }

    def to_rows(self) -> List[List[float]]:
        return [
            [e + 1, self.loss[e], self.accuracy[e], self.f1[e],
             self.val_loss[e], self.val_accuracy[e], self.val_f1[e]]
            for e in range(self.epochs)
        ]


_SERIES_COLORS = {
    "loss": "#d62728",
    "accuracy": "#1f77b4",
    "f1": "#2ca02c",
    "val_loss": "#ff7f0e",
    "val_accuracy": "#9467bd",
    "val_f1": "#8c564b",
}


def _history_svg(h: TrainingHistory) -> str:
    width, height = 800, 480
    ml, mr, mt, mb = 60, 170, 30, 50
    plot_w = width - ml - mr
    plot_h = height - mt - mb
    n = h.epochs
    series = h.series()
    all_vals = [v for vals in series.values() for v in vals]
    lo = min(all_vals)
    hi = max(all_vals)
    if hi - lo < 1e-12:
        lo -= 0.5
        hi += 0.5
    pad = 0.05 * (hi - lo)
    lo -= pad
    hi += pad

    def sx(epoch):
        if n == 1:
            return ml + plot_w / 2
        return ml + plot_w * (epoch - 1) / (n - 1)

    def sy(v):
        return mt + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + plot_h}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt + plot_h}" x2="{ml + plot_w}" y2="{mt + plot_h}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lo + frac * (hi - lo)
        y = sy(v)
        parts.append(
            f'<text x="{ml - 8}" y="{y:.2f}" font-size="11" text-anchor="end" '
            f'dominant-baseline="middle" font-family="sans-serif">{v:.3f}</text>'
        )
        parts.append(
            f'<line x1="{ml - 4}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>'
        )
    tick_epochs = sorted({1, n, max(1, n // 2)})
    for e in tick_epochs:
        x = sx(e)
        parts.append(
            f'<text x="{x:.2f}" y="{mt + plot_h + 18}" font-size="11" text-anchor="middle" '
            f'font-family="sans-serif">{e}</text>'
        )
    parts.append(
        f'<text x="{ml + plot_w / 2:.2f}" y="{height - 12}" font-size="12" '
        f'text-anchor="middle" font-family="sans-serif">epoch</text>'
    )
    for i, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{sx(e + 1):.2f},{sy(v):.2f}" for e, v in enumerate(vals))
        color = _SERIES_COLORS[name]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
        )
        ly = mt + 16 + 20 * i
        lx = ml + plot_w + 14
        parts.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 28}" y="{ly + 4}" font-size="12" font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_history(h: TrainingHistory, out_dir: Path) -> Dict[str, Path]:
    """Write history.csv and history.svg into ``out_dir``."""
    if h.epochs == 0:
        raise DataError("cannot emit an empty training history")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "history.csv"
    svg_path = out / "history.svg"
    lines = [",".join(HISTORY_COLUMNS)]
    for row in h.to_rows():
        lines.append(",".join([str(int(row[0]))] + [repr(float(v)) for v in row[1:]]))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    svg_path.write_text(_history_svg(h), encoding="utf-8")
    return {"csv": csv_path, "svg": svg_path}


def save_report(report: MetricReport, path: Path, meta: dict | None = None) -> None:
    obj = dict(report.to_dict())
    if meta:
        obj["meta"] = meta
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
