"""Run externally trained networks stored in the Keras HDF5 format.

Only a small operator subset is executed (enough for the pooled or
flattened dense heads this pipeline needs): InputLayer, Flatten,
Dense, Activation, ReLU, Softmax, Dropout (inference no-op),
GlobalAveragePooling2D, and Rescaling.  Anything else fails loudly with
the layer type named.  A JSON sidecar next to the model file declares
input dimensions, normalization, output semantics, and class order;
predictions are adapted to a two-or-more column row-stochastic matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import h5py
import numpy as np

from .errors import ModelError
from .imageops import batch_bilinear_resize

_SUPPORTED = (
    "InputLayer",
    "Flatten",
    "Dense",
    "Activation",
    "ReLU",
    "Softmax",
    "Dropout",
    "GlobalAveragePooling2D",
    "Rescaling",
)
_ACTIVATIONS = ("linear", "relu", "sigmoid", "softmax")


@dataclass
class InterchangeModelHandle:
    path: Path
    input_dims: Tuple[int, int, int] = (299, 299, 3)
    normalization: Optional[dict] = None
    outputs: str = "probabilities"  # or "logits" or "sigmoid"
    class_names: List[str] = field(default_factory=lambda: ["normal", "ALL"])

    @classmethod
    def from_sidecar(cls, model_path: Path) -> "InterchangeModelHandle":
        """Build a handle from ``<model>.json`` next to the model file."""
        model_path = Path(model_path)
        sidecar = model_path.with_name(model_path.name + ".json")
        if not sidecar.is_file():
            raise ModelError(f"missing model sidecar: {sidecar}")
        try:
            obj = json.loads(sidecar.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ModelError(f"malformed sidecar {sidecar}: {exc}") from exc
        dims = tuple(obj.get("input_dims", (299, 299, 3)))
        if len(dims) != 3:
            raise ModelError(f"sidecar input_dims must have 3 entries, got {dims}")
        outputs = obj.get("outputs", "probabilities")
        if outputs not in ("probabilities", "logits", "sigmoid"):
            raise ModelError(f"unknown outputs declaration {outputs!r} in {sidecar}")
        return cls(
            path=model_path,
            input_dims=dims,
            normalization=obj.get("normalization"),
            outputs=outputs,
            class_names=list(obj.get("class_names", ["normal", "ALL"])),
        )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _apply_activation(x: np.ndarray, name: str, where: str) -> np.ndarray:
    if name == "linear":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "softmax":
        return _softmax(x)
    raise ModelError(f"unsupported activation {name!r} in {where}")


def _collect_weights(group: h5py.Group) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}

    def visit(name, obj):
        if isinstance(obj, h5py.Dataset):
            base = name.rsplit("/", 1)[-1]
            if base.endswith(":0"):
                base = base[:-2]
            if base in ("kernel", "bias") and base not in out:
                out[base] = np.asarray(obj, dtype=np.float64)

    group.visititems(visit)
    return out


class _Step:
    """One executable layer: a callable plus its description."""

    def __init__(self, kind: str, fn):
        self.kind = kind
        self.fn = fn

    def __call__(self, x):
        return self.fn(x)


def _build_steps(layers: list, weights_root, path: Path) -> Tuple[list, Optional[tuple]]:
    steps: List[_Step] = []
    graph_input = None
    for layer in layers:
        cls = layer.get("class_name")
        cfg = layer.get("config", {})
        name = cfg.get("name", cls)
        if cls not in _SUPPORTED:
            raise ModelError(f"unsupported layer type {cls!r} in {path}")
        if cls == "InputLayer":
            shape = cfg.get("batch_shape") or cfg.get("batch_input_shape")
            if shape is not None:
                graph_input = tuple(shape[1:])
            continue
        if cls in ("Flatten",):
            steps.append(_Step(cls, lambda x: x.reshape(x.shape[0], -1)))
        elif cls == "Dropout":
            steps.append(_Step(cls, lambda x: x))
        elif cls == "GlobalAveragePooling2D":
            steps.append(_Step(cls, lambda x: x.mean(axis=(1, 2))))
        elif cls == "ReLU":
            steps.append(_Step(cls, lambda x: np.maximum(x, 0.0)))
        elif cls == "Softmax":
            steps.append(_Step(cls, _softmax))
        elif cls == "Rescaling":
            scale = float(cfg.get("scale", 1.0))
            offset = float(cfg.get("offset", 0.0))
            steps.append(_Step(cls, lambda x, s=scale, o=offset: x * s + o))
        elif cls == "Activation":
            act = cfg.get("activation", "linear")
            if act not in _ACTIVATIONS:
                raise ModelError(f"unsupported activation {act!r} in {path}")
            steps.append(_Step(cls, lambda x, a=act: _apply_activation(x, a, str(path))))
        elif cls == "Dense":
            if name not in weights_root:
                raise ModelError(f"weights for layer {name!r} not found in {path}")
            w = _collect_weights(weights_root[name])
            if "kernel" not in w:
                raise ModelError(f"kernel for dense layer {name!r} not found in {path}")
            kernel = w["kernel"]
            units = int(cfg.get("units", kernel.shape[1]))
            if kernel.shape[1] != units:
                raise ModelError(
                    f"dense layer {name!r} kernel shape {kernel.shape} does not match units {units}"
                )
            bias = w.get("bias")
            if cfg.get("use_bias", True) and bias is None:
                raise ModelError(f"bias for dense layer {name!r} not found in {path}")
            act = cfg.get("activation", "linear")
            if act not in _ACTIVATIONS:
                raise ModelError(f"unsupported activation {act!r} in {path}")

            def dense(x, k=kernel, b=bias, a=act):
                if x.ndim != 2:
                    raise ModelError(
                        f"dense layer expects flat input, got shape {x.shape}"
                    )
                if x.shape[1] != k.shape[0]:
                    raise ModelError(
                        f"input width {x.shape[1]} does not match kernel rows {k.shape[0]}"
                    )
                out = x @ k
                if b is not None:
                    out = out + b
                return _apply_activation(out, a, "dense layer")

            steps.append(_Step(cls, dense))
    return steps, graph_input


class KerasSubsetClassifier:
    """Classifier backed by a parsed HDF5 network."""

    def __init__(self, handle: InterchangeModelHandle, steps, graph_input):
        self.handle = handle
        self._steps = steps
        self._graph_input = graph_input

    def _prepare(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 4 or x.shape[3] != self.handle.input_dims[2]:
            raise ModelError(
                f"expected an (N, H, W, {self.handle.input_dims[2]}) batch, got {x.shape}"
            )
        gi = self._graph_input
        if gi is not None and len(gi) == 3:
            gh, gw, gc = gi
            if gc is not None and gc != x.shape[3]:
                raise ModelError(
                    f"batch has {x.shape[3]} channels, model expects {gc}"
                )
            if gh is not None and gw is not None and (gh, gw) != x.shape[1:3]:
                x = batch_bilinear_resize(x, gh, gw)
        norm = self.handle.normalization or {}
        if "mean" in norm or "std" in norm:
            mean = np.asarray(norm.get("mean", 0.0), dtype=np.float64)
            std = np.asarray(norm.get("std", 1.0), dtype=np.float64)
            x = (x - mean) / std
        if "scale" in norm or "offset" in norm:
            x = x * float(norm.get("scale", 1.0)) + float(norm.get("offset", 0.0))
        return x

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        x = self._prepare(batch)
        for step in self._steps:
            x = step(x)
        if x.ndim != 2:
            raise ModelError(f"model output is not a matrix: shape {x.shape}")
        if self.handle.outputs == "logits":
            x = _softmax(x)
        elif self.handle.outputs == "sigmoid" or x.shape[1] == 1:
            if x.shape[1] != 1:
                raise ModelError(
                    f"sigmoid output declared but model emits {x.shape[1]} columns"
                )
            p = np.clip(x[:, 0], 0.0, 1.0)
            x = np.column_stack([1.0 - p, p])
        sums = x.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-3):
            raise ModelError(
                "model outputs declared as probabilities do not sum to 1 "
                f"(worst row sum {sums[np.argmax(np.abs(sums - 1.0))]:.6f})"
            )
        x = x / sums[:, None]
        if len(self.handle.class_names) != x.shape[1]:
            raise ModelError(
                f"{x.shape[1]} output columns but {len(self.handle.class_names)} class names declared"
            )
        return x


def load_interchange(handle: InterchangeModelHandle) -> KerasSubsetClassifier:
    """Parse the HDF5 file and return a ready Classifier."""
    path = Path(handle.path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    try:
        f = h5py.File(path, "r")
    except OSError as exc:
        raise ModelError(f"cannot open {path} as HDF5: {exc}") from exc
    with f:
        raw = f.attrs.get("model_config")
        if raw is None:
            raise ModelError(f"no model_config attribute in {path}")
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            config = json.loads(raw)
        except ValueError as exc:
            raise ModelError(f"malformed model_config in {path}: {exc}") from exc
        if config.get("class_name") != "Sequential":
            raise ModelError(
                f"unsupported model topology {config.get('class_name')!r} in {path}; "
                "only Sequential models are handled"
            )
        layers = config.get("config", {}).get("layers", [])
        if "model_weights" not in f:
            raise ModelError(f"no model_weights group in {path}")
        steps, graph_input = _build_steps(layers, f["model_weights"], path)
        if config.get("config", {}).get("build_input_shape") and graph_input is None:
            graph_input = tuple(config["config"]["build_input_shape"][1:])
    if not steps:
        raise ModelError(f"model in {path} has no executable layers")
    return KerasSubsetClassifier(handle, steps, graph_input)
