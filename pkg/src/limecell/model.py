"""Classifier contract and a small trainable reference network.

The reference network is flatten -> dense(hidden, ReLU) -> dense(1,
sigmoid), trained with class-weighted binary cross entropy and Adam.
It exists to exercise the loss, optimizer, history, and explanation
plumbing end to end at desk scale; it accepts 299x299x3 batches like
any other Classifier and downsamples internally to its configured
input dimensions.

History semantics: the per-epoch training loss is the optimized
objective (class-weighted BCE over the full training set at epoch end);
validation loss is unweighted BCE, as a held-out metric should be.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from . import __version__ as _tool_version
from .errors import DataError, ModelError
from .imageops import batch_bilinear_resize, bilinear_resize
from .imagestore import CellImage
from .metrics import (
    EPS_LOGLOSS,
    TrainingHistory,
    accuracy,
    confusion,
    f1,
)
from .rng import RandomStream
from .sampling import ClassWeights


@runtime_checkable
class Classifier(Protocol):
    """Anything with a batched predict_proba returning row-stochastic output."""

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class ReferenceNetConfig:
    input_dims: Tuple[int, int, int] = (299, 299, 3)
    hidden_units: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 35
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        ih, iw, ic = self.input_dims
        if ih < 1 or iw < 1 or ic != 3:
            raise DataError(f"input_dims must be (H>=1, W>=1, 3), got {self.input_dims}")
        if self.hidden_units < 1:
            raise DataError(f"hidden_units must be positive, got {self.hidden_units}")
        if self.learning_rate <= 0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise DataError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be at least 1, got {self.batch_size}")

    @property
    def flat_dim(self) -> int:
        ih, iw, ic = self.input_dims
        return ih * iw * ic

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "hidden_units": self.hidden_units,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


@dataclass
class Parameters:
    w1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, 1)
    b2: np.ndarray  # (1,)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)):
                raise ModelError(f"non-finite values in parameter tensor {name}")

    def copy(self) -> "Parameters":
        return Parameters(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def tensors(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_parameters(cfg: ReferenceNetConfig, stream: RandomStream) -> Parameters:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    d = cfg.flat_dim
    h = cfg.hidden_units
    lim1 = 1.0 / np.sqrt(d)
    lim2 = 1.0 / np.sqrt(h)
    return Parameters(
        w1=stream.uniform(-lim1, lim1, (d, h)),
        b1=stream.uniform(-lim1, lim1, (h,)),
        w2=stream.uniform(-lim2, lim2, (h, 1)),
        b2=stream.uniform(-lim2, lim2, (1,)),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: Parameters, x: np.ndarray):
    z1 = x @ params.w1 + params.b1
    h = np.maximum(z1, 0.0)
    z2 = h @ params.w2 + params.b2
    p = _sigmoid(z2[:, 0])
    return z1, h, p


def weighted_bce(p: np.ndarray, y: np.ndarray, w: Optional[ClassWeights],
                 eps: float = EPS_LOGLOSS) -> float:
    """Class-weighted binary cross entropy; w=None means unit weights."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise DataError(f"probability/label length mismatch: {p.shape} vs {y.shape}")
    sw = w.per_sample(y.astype(np.int64)) if w is not None else np.ones_like(p)
    pc = np.clip(p, eps, 1.0 - eps)
    terms = y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)
    return float(-(sw * terms).mean())


def _loss_and_grads(params: Parameters, x: np.ndarray, y: np.ndarray,
                    sample_w: np.ndarray):
    """Weighted BCE loss and its analytic gradient for one batch."""
    n = x.shape[0]
    z1, h, p = _forward(params, x)
    pc = np.clip(p, EPS_LOGLOSS, 1.0 - EPS_LOGLOSS)
    loss = float(-(sample_w * (y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))).mean())
    # dL/dz2 simplifies to w*(p - y)/N through the sigmoid.
    dz2 = (sample_w * (p - y) / n)[:, None]
    grads = {
        "w2": h.T @ dz2,
        "b2": dz2.sum(axis=0),
    }
    dh = dz2 @ params.w2.T
    dz1 = dh * (z1 > 0.0)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


@dataclass
class _AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0


def _adam_init(params: Parameters) -> _AdamState:
    return _AdamState(
        m={k: np.zeros_like(a) for k, a in params.tensors().items()},
        v={k: np.zeros_like(a) for k, a in params.tensors().items()},
    )


def _adam_step(params: Parameters, grads: Dict[str, np.ndarray],
               state: _AdamState, cfg: ReferenceNetConfig) -> None:
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for k, a in params.tensors().items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / corr1
        v_hat = state.v[k] / corr2
        a -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


class ReferenceNet:
    """The trainable reference classifier; satisfies the Classifier contract."""

    def __init__(self, params: Parameters, cfg: ReferenceNetConfig):
        self.params = params
        self.cfg = cfg

    def _design(self, batch: np.ndarray) -> np.ndarray:
        if batch.ndim != 4 or batch.shape[3] != 3:
            raise DataError(f"expected an (N, H, W, 3) batch, got shape {batch.shape}")
        ih, iw, _ = self.cfg.input_dims
        small = batch_bilinear_resize(np.asarray(batch, dtype=np.float64), ih, iw)
        return small.reshape(batch.shape[0], -1)

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        x = self._design(batch)
        _, _, p = _forward(self.params, x)
        return np.column_stack([1.0 - p, p])


def _stack_design(images: Sequence[CellImage], cfg: ReferenceNetConfig):
    ih, iw, _ = cfg.input_dims
    n = len(images)
    x = np.empty((n, cfg.flat_dim), dtype=np.float64)
    y = np.empty(n, dtype=np.int64)
    for i, img in enumerate(images):
        x[i] = bilinear_resize(np.asarray(img.pixels, dtype=np.float64), ih, iw).ravel()
        y[i] = img.label
    if n and not np.all((y == 0) | (y == 1)):
        raise DataError("reference training expects binary labels 0/1")
    return x, y


def _epoch_metrics(params, x, y, sample_w):
    _, _, p = _forward(params, x)
    pm = np.column_stack([1.0 - p, p])
    c = confusion(y, pm)
    pc = np.clip(p, EPS_LOGLOSS, 1.0 - EPS_LOGLOSS)
    yf = y.astype(np.float64)
    terms = yf * np.log(pc) + (1.0 - yf) * np.log(1.0 - pc)
    loss = float(-(sample_w * terms).mean())
    return loss, accuracy(c), f1(c)


def train_reference(train: Sequence[CellImage], val: Sequence[CellImage],
                    cfg: ReferenceNetConfig, w: ClassWeights,
                    stream: RandomStream) -> Tuple[Parameters, TrainingHistory]:
    """Mini-batch Adam on class-weighted BCE; returns final parameters and
    the six-series per-epoch history."""
    if not train or not val:
        raise DataError("train and validation splits must both be non-empty")
    x_tr, y_tr = _stack_design(train, cfg)
    x_va, y_va = _stack_design(val, cfg)
    sw_tr = w.per_sample(y_tr)
    unit_va = np.ones(y_va.size, dtype=np.float64)

    init_stream = stream.substream(0)
    shuffle_stream = stream.substream(1)
    params = init_parameters(cfg, init_stream)
    history = TrainingHistory()
    state = _adam_init(params)

    n = x_tr.shape[0]
    for epoch in range(cfg.epochs):
        order = shuffle_stream.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, grads = _loss_and_grads(params, x_tr[idx], y_tr[idx], sw_tr[idx])
            if not np.isfinite(loss):
                raise ModelError(
                    f"non-finite training loss at epoch {epoch + 1}, batch {b + 1}"
                )
            _adam_step(params, grads, state, cfg)
        tr_loss, tr_acc, tr_f1 = _epoch_metrics(params, x_tr, y_tr, sw_tr)
        va_loss, va_acc, va_f1 = _epoch_metrics(params, x_va, y_va, unit_va)
        history.append(tr_loss, tr_acc, tr_f1, va_loss, va_acc, va_f1)
    return params, history


def grad_check(params: Parameters, batch: Tuple[np.ndarray, np.ndarray],
               w: ClassWeights, n_coords: int = 100, step: float = 1e-5,
               stream: Optional[RandomStream] = None) -> float:
    """Max relative error between analytic gradients and central differences.

    The finite-difference value is treated as ground truth; the
    denominator is floored so that coordinates where both values vanish
    (dead ReLU paths, zero inputs) do not blow up the ratio.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise DataError("grad check needs a non-empty batch")
    sample_w = w.per_sample(y)
    _, grads = _loss_and_grads(params, x, y.astype(np.float64), sample_w)
    if stream is None:
        stream = RandomStream(0, 99)

    names = list(params.tensors())
    sizes = {k: params.tensors()[k].size for k in names}
    total = sum(sizes.values())
    picks = stream.integers(0, total, size=n_coords)

    entries = []  # (analytic, finite difference) per sampled coordinate
    for flat in picks:
        offset = int(flat)
        for k in names:
            if offset < sizes[k]:
                break
            offset -= sizes[k]
        tensor = params.tensors()[k]
        coord = np.unravel_index(offset, tensor.shape)
        orig = tensor[coord]
        tensor[coord] = orig + step
        lp, _ = _loss_and_grads(params, x, y.astype(np.float64), sample_w)
        tensor[coord] = orig - step
        lm, _ = _loss_and_grads(params, x, y.astype(np.float64), sample_w)
        tensor[coord] = orig
        fd = (lp - lm) / (2.0 * step)
        entries.append((float(grads[k][coord]), fd))

    fds = np.array([e[1] for e in entries])
    guard = max(1e-8, 1e-3 * float(np.max(np.abs(fds))) if fds.size else 0.0)
    worst = 0.0
    for analytic, fd in entries:
        rel = abs(analytic - fd) / max(abs(fd), guard)
        worst = max(worst, rel)
    return worst


_PARAMS_FORMAT = 1


def save_parameters(params: Parameters, cfg: ReferenceNetConfig, path: Path,
                    meta: Optional[dict] = None) -> None:
    """Self-describing archive: the four tensors plus a JSON metadata entry."""
    info = {
        "format": _PARAMS_FORMAT,
        "kind": "reference-net",
        "tool_version": _tool_version,
        "config": cfg.to_dict(),
    }
    if meta:
        info["meta"] = meta
    np.savez(
        Path(path),
        w1=params.w1,
        b1=params.b1,
        w2=params.w2,
        b2=params.b2,
        info=np.bytes_(json.dumps(info, sort_keys=True).encode("utf-8")),
    )


def load_parameters(path: Path) -> Tuple[Parameters, ReferenceNetConfig, dict]:
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    try:
        with np.load(path) as data:
            info = json.loads(data["info"].tobytes().decode("utf-8"))
            if info.get("format") != _PARAMS_FORMAT or info.get("kind") != "reference-net":
                raise ModelError(f"unrecognized parameter archive: {path}")
            params = Parameters(
                w1=data["w1"], b1=data["b1"], w2=data["w2"], b2=data["b2"]
            )
    except (KeyError, ValueError, OSError) as exc:
        raise ModelError(f"cannot load parameters from {path}: {exc}") from exc
    cfg = ReferenceNetConfig(**{**info["config"], "input_dims": tuple(info["config"]["input_dims"])})
    return params, cfg, info
