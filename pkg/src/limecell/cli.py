"""Command line front end.

Subcommands: ingest, weights, split, train-ref, evaluate, explain.
Option precedence is flag > config file > built-in default; the config
file is a flat ``key = value`` document.  Exit codes: 0 success,
1 usage error, 2 data error, 3 model error.

Every emitted artifact records the run's seed, a digest of the
effective configuration, and the tool version, either inline (JSON
artifacts) or through a ``run.json`` written next to binary artifacts;
two runs with the same triple produce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .augment import AugmentConfig, augment_sample
from .errors import DataError, ModelError
from .explain import explain as run_explain
from .imagestore import (
    CellImage,
    decode_bmp,
    ingest,
    load_cell_images,
    load_manifest,
    normalize_resize,
    save_manifest,
)
from .interchange import InterchangeModelHandle, load_interchange
from .metrics import emit_history, report_from, save_report
from .model import (
    ReferenceNet,
    ReferenceNetConfig,
    load_parameters,
    save_parameters,
    train_reference,
)
from .rng import RandomStream
from .sampling import (
    compute_class_weights,
    load_folds,
    save_folds,
    stratified_holdout,
    stratified_kfold,
)
from .slic import SlicParams, slic_segment
from .render import (
    render_boundaries,
    render_heatmap,
    render_segments,
    save_png,
)

log = logging.getLogger(__name__)

_EXIT_USAGE = 1
_EXIT_DATA = 2
_EXIT_MODEL = 3

_PREDICT_CHUNK = 64

_LABEL_NAMES = {0: "normal", 1: "ALL"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(_EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise DataError(f"cannot parse boolean value {raw!r}")


def _read_config_file(path: str) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    out: Dict[str, str] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"config line {lineno} is not 'key = value': {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip().lower().replace("-", "_")] = value.strip()
    return out


# name -> (python type, default); shared across commands that use the knob.
_OPTION_TYPES = {
    "seed": (int, 0),
    "k": (int, 3),
    "fold": (int, 1),
    "holdout_fraction": (float, 0.0),
    "epochs": (int, 35),
    "batch_size": (int, 32),
    "hidden_units": (int, 32),
    "learning_rate": (float, 1e-3),
    "input_size": (int, 299),
    "augment_copies": (int, 0),
    "n_samples": (int, 1000),
    "sigma": (float, 0.25),
    "alpha": (float, 1.0),
    "n_segments": (int, 50),
    "compactness": (float, 10.0),
    "iterations": (int, 10),
    "top_k": (int, 5),
    "positive_only": (bool, False),
    "stamp": (bool, False),
    "check": (bool, False),
    "label_map": (str, "all=1,hem=0"),
    "p_flip_v": (float, 0.5),
    "p_flip_h": (float, 0.5),
    "brightness_delta": (str, "-0.1,0.1"),
    "saturation_factor": (str, "0.8,1.2"),
    "contrast_factor": (str, "0.8,1.2"),
    "crop_fraction": (str, "0.8,1.0"),
}


def _coerce(name: str, raw):
    typ, _ = _OPTION_TYPES[name]
    if isinstance(raw, str):
        if typ is bool:
            return _parse_bool(raw)
        try:
            return typ(raw)
        except ValueError as exc:
            raise DataError(f"bad value for {name}: {raw!r}") from exc
    return raw


def _effective(args: argparse.Namespace, names: Sequence[str]) -> Dict[str, object]:
    """Resolve each named option as flag > config file > default."""
    file_conf: Dict[str, str] = {}
    if getattr(args, "config", None):
        file_conf = _read_config_file(args.config)
    unknown = set(file_conf) - set(_OPTION_TYPES)
    if unknown:
        raise DataError(f"unknown config file keys: {', '.join(sorted(unknown))}")
    out: Dict[str, object] = {}
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = flag
        elif name in file_conf:
            out[name] = _coerce(name, file_conf[name])
        else:
            out[name] = _OPTION_TYPES[name][1]
    return out


def _meta(command: str, conf: Dict[str, object], **extra) -> Dict[str, object]:
    payload = {"command": command, **conf}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:16]
    meta = {
        "seed": conf.get("seed", 0),
        "config_digest": digest,
        "tool_version": __version__,
        "command": command,
    }
    meta.update(extra)
    return meta


def _write_run_record(out_dir: Path, meta: dict, artifacts: List[str]) -> None:
    record = {"meta": meta, "artifacts": sorted(artifacts)}
    (out_dir / "run.json").write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _parse_label_map(raw: str) -> Dict[str, int]:
    mapping: Dict[str, int] = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise DataError(f"label map entry {part!r} is not 'dirname=label'")
        name, value = part.split("=", 1)
        try:
            mapping[name.strip()] = int(value)
        except ValueError as exc:
            raise DataError(f"label in {part!r} is not an integer") from exc
    if not mapping:
        raise DataError(f"label map {raw!r} is empty")
    return mapping


def cmd_ingest(args: argparse.Namespace) -> int:
    conf = _effective(args, ["seed", "label_map", "stamp"])
    manifest = ingest(Path(args.root), _parse_label_map(str(conf["label_map"])))
    if conf["stamp"]:
        manifest.created_at = datetime.now(timezone.utc).isoformat()
    meta = _meta("ingest", conf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out, meta=meta)
    print(f"{len(manifest.records)} images, {manifest.duplicates} duplicates")
    return 0


def cmd_weights(args: argparse.Namespace) -> int:
    conf = _effective(args, ["seed"])
    manifest = load_manifest(Path(args.manifest))
    labels = manifest.labels()
    cw = compute_class_weights(labels)
    counts = np.bincount(labels)
    payload = {
        "weights": {str(c): w for c, w in sorted(cw.weights.items())},
        "counts": {str(c): int(counts[c]) for c in sorted(cw.weights)},
        "n_samples": int(labels.size),
        "meta": _meta("weights", conf),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(payload["weights"], sort_keys=True))
    return 0


def _check_stratification(labels: np.ndarray, fold_of: np.ndarray, k: int) -> None:
    active = fold_of >= 0
    y = labels[active]
    f = fold_of[active]
    for c in np.unique(y):
        n_c = int((y == c).sum())
        for i in range(k):
            in_fold = int(((y == c) & (f == i)).sum())
            if abs(in_fold - n_c / k) >= 1:
                raise DataError(
                    f"stratification bound violated: class {c}, fold {i}: "
                    f"{in_fold} vs {n_c}/{k}"
                )
    sizes = np.bincount(f, minlength=k)
    if sizes.max() - sizes.min() > 1:
        raise DataError(f"fold sizes differ by more than one: {sizes.tolist()}")


def cmd_split(args: argparse.Namespace) -> int:
    conf = _effective(args, ["seed", "k", "holdout_fraction", "check"])
    manifest = load_manifest(Path(args.manifest))
    labels = manifest.labels()
    seed = int(conf["seed"])
    k = int(conf["k"])
    hold_idx, rest_idx = stratified_holdout(labels, float(conf["holdout_fraction"]), seed)
    fa = stratified_kfold(labels[rest_idx], k, seed)
    fold_of_full = np.full(labels.size, -1, dtype=np.int64)
    fold_of_full[rest_idx] = fa.fold_of
    if conf["check"]:
        _check_stratification(labels, fold_of_full, k)
        print("stratification check passed")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_folds(k, seed, fold_of_full, out, holdout=hold_idx,
               meta=_meta("split", conf, k=k))
    print(f"{k} folds over {int(rest_idx.size)} samples, {int(hold_idx.size)} held out")
    return 0


def _train_val_indices(folds: dict, fold_id: int) -> tuple:
    fold_of = folds["fold_of"]
    k = folds["k"]
    if not 0 <= fold_id < k:
        raise DataError(f"fold id {fold_id} out of range for k={k}")
    val = np.flatnonzero(fold_of == fold_id)
    train = np.flatnonzero((fold_of >= 0) & (fold_of != fold_id))
    if val.size == 0 or train.size == 0:
        raise DataError(f"fold {fold_id} leaves an empty train or validation split")
    return train, val


def _augmented_training_set(images: List[CellImage], copies: int, seed: int,
                            conf: Dict[str, object]) -> List[CellImage]:
    if copies <= 0:
        return images

    def _pair(raw: str):
        lo, hi = (float(v) for v in str(raw).split(","))
        return (lo, hi)

    acfg = AugmentConfig(
        p_flip_v=float(conf["p_flip_v"]),
        p_flip_h=float(conf["p_flip_h"]),
        brightness_delta=_pair(conf["brightness_delta"]),
        saturation_factor=_pair(conf["saturation_factor"]),
        contrast_factor=_pair(conf["contrast_factor"]),
        crop_fraction=_pair(conf["crop_fraction"]),
        seed=seed,
    )
    root = RandomStream(seed, 3)
    out = list(images)
    for i, img in enumerate(images):
        for c in range(copies):
            stream = root.substream(i).substream(c)
            out.append(
                CellImage(
                    pixels=augment_sample(img.pixels, stream, acfg),
                    label=img.label,
                    sample_id=f"{img.sample_id}+aug{c}",
                    source_path=img.source_path,
                    digest=img.digest,
                )
            )
    return out


def cmd_train_ref(args: argparse.Namespace) -> int:
    names = ["seed", "fold", "epochs", "batch_size", "hidden_units", "learning_rate",
             "input_size", "augment_copies", "p_flip_v", "p_flip_h", "brightness_delta",
             "saturation_factor", "contrast_factor", "crop_fraction"]
    conf = _effective(args, names)
    manifest = load_manifest(Path(args.manifest))
    folds = load_folds(Path(args.folds))
    fold_id = int(conf["fold"])
    train_idx, val_idx = _train_val_indices(folds, fold_id)

    seed = int(conf["seed"])
    size = int(conf["input_size"])
    cfg = ReferenceNetConfig(
        input_dims=(size, size, 3),
        hidden_units=int(conf["hidden_units"]),
        learning_rate=float(conf["learning_rate"]),
        epochs=int(conf["epochs"]),
        batch_size=int(conf["batch_size"]),
        seed=seed,
    )
    train_images = load_cell_images(manifest, train_idx)
    val_images = load_cell_images(manifest, val_idx)
    train_images = _augmented_training_set(
        train_images, int(conf["augment_copies"]), seed, conf
    )
    weights = compute_class_weights([img.label for img in train_images])
    stream = RandomStream(seed, 4)
    params, history = train_reference(train_images, val_images, cfg, weights, stream)

    meta = _meta("train-ref", conf, fold=fold_id, k=folds["k"],
                 epochs=cfg.epochs, batch_size=cfg.batch_size)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_parameters(params, cfg, out_dir / "params.npz", meta=meta)
    artifacts = ["params.npz"]
    if history.epochs:
        emit_history(history, out_dir)
        artifacts += ["history.csv", "history.svg"]
    net = ReferenceNet(params, cfg)
    probs = _predict_images(net, val_images)
    report = report_from([img.label for img in val_images], probs)
    save_report(report, out_dir / "report.json", meta=meta)
    artifacts.append("report.json")
    _write_run_record(out_dir, meta, artifacts)
    print(
        f"trained {cfg.epochs} epochs on {len(train_images)} samples; "
        f"fold {fold_id} validation accuracy {report.accuracy:.4f}"
    )
    return 0


def _predict_images(classifier, images: List[CellImage]) -> np.ndarray:
    rows = []
    for start in range(0, len(images), _PREDICT_CHUNK):
        chunk = images[start : start + _PREDICT_CHUNK]
        batch = np.stack([img.pixels for img in chunk]).astype(np.float32)
        rows.append(np.asarray(classifier.predict_proba(batch), dtype=np.float64))
    return np.concatenate(rows, axis=0)


def _load_model(path: Path):
    """Reference parameter archives and interchange files share --model."""
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    if path.suffix == ".npz":
        params, cfg, _ = load_parameters(path)
        return ReferenceNet(params, cfg), ["normal", "ALL"]
    handle = InterchangeModelHandle.from_sidecar(path)
    clf = load_interchange(handle)
    return clf, list(handle.class_names)


def cmd_evaluate(args: argparse.Namespace) -> int:
    conf = _effective(args, ["seed", "fold"])
    manifest = load_manifest(Path(args.manifest))
    folds = load_folds(Path(args.folds))
    fold_id = int(conf["fold"])
    _, val_idx = _train_val_indices(folds, fold_id)
    classifier, _ = _load_model(Path(args.model))
    val_images = load_cell_images(manifest, val_idx)
    probs = _predict_images(classifier, val_images)
    report = report_from([img.label for img in val_images], probs)
    meta = _meta("evaluate", conf, fold=fold_id, k=folds["k"],
                 model=str(Path(args.model).name))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_report(report, out_dir / "report.json", meta=meta)
    print(
        f"fold {fold_id}: accuracy {report.accuracy:.4f}, f1 {report.f1:.4f}, "
        f"logloss {report.logloss:.4f}"
    )
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    names = ["seed", "n_samples", "sigma", "alpha", "n_segments", "compactness",
             "iterations", "top_k", "positive_only"]
    conf = _effective(args, names)
    image_path = Path(args.image)
    if not image_path.is_file():
        raise DataError(f"image not found: {image_path}")
    raw = decode_bmp(image_path.read_bytes())
    image = normalize_resize(raw)
    classifier, class_names = _load_model(Path(args.model))

    slic_params = SlicParams(
        n_segments=int(conf["n_segments"]),
        compactness=float(conf["compactness"]),
        iterations=int(conf["iterations"]),
    )
    seg = slic_segment(image, slic_params)
    stream = RandomStream(int(conf["seed"]), 2)
    result = run_explain(
        image,
        classifier,
        slic_params,
        n_samples=int(conf["n_samples"]),
        sigma=float(conf["sigma"]),
        alpha=float(conf["alpha"]),
        stream=stream,
        seg=seg,
    )

    label_name = (
        class_names[result.target_label]
        if result.target_label < len(class_names)
        else str(result.target_label)
    )
    meta = _meta("explain", conf, model=str(Path(args.model).name),
                 image=str(image_path.name))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = result.to_dict()
    payload["label_name"] = label_name
    payload["meta"] = meta
    (out_dir / "explanation.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    top_k = int(conf["top_k"])
    save_png(render_segments(image, seg), out_dir / "segments.png")
    save_png(render_boundaries(image, seg), out_dir / "boundaries.png")
    save_png(
        render_heatmap(image, seg, result,
                       positive_only=bool(conf["positive_only"]), top_k=top_k),
        out_dir / "heatmap.png",
    )
    save_png(
        render_heatmap(image, seg, result, positive_only=True, top_k=top_k),
        out_dir / "heatmap_positive.png",
    )
    _write_run_record(
        out_dir,
        meta,
        ["explanation.json", "segments.png", "boundaries.png", "heatmap.png",
         "heatmap_positive.png"],
    )
    print(f"The prediction of the sample is: {label_name}")
    print(f"Prediction Confidence Percentage is: {result.confidence * 100.0}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="random seed (default 0)")


def build_parser() -> _Parser:
    parser = _Parser(prog="limecell", description=__doc__)
    parser.add_argument("--version", action="version", version=f"limecell {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a BMP tree into a manifest")
    p.add_argument("root")
    p.add_argument("--out", default="manifest.jsonl")
    p.add_argument("--label-map", dest="label_map",
                   help="dirname=label pairs, e.g. 'all=1,hem=0'")
    p.add_argument("--stamp", dest="stamp", action="store_const", const=True,
                   help="record the ingest time (costs rerun byte-identity)")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("weights", help="compute balanced class weights")
    p.add_argument("manifest")
    p.add_argument("--out", default="weights.json")
    _add_common(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("split", help="stratified k-fold assignment")
    p.add_argument("manifest")
    p.add_argument("--out", default="folds.json")
    p.add_argument("--k", type=int)
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    p.add_argument("--check", dest="check", action="store_const", const=True,
                   help="verify stratification bounds before writing")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-ref", help="train the reference classifier")
    p.add_argument("manifest")
    p.add_argument("folds")
    p.add_argument("--out", default="train_out")
    p.add_argument("--fold", type=int, help="validation fold id (default 1)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden-units", dest="hidden_units", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--input-size", dest="input_size", type=int,
                   help="square downsample size fed to the net (default 299)")
    p.add_argument("--augment-copies", dest="augment_copies", type=int,
                   help="augmented copies per training image (default 0)")
    _add_common(p)
    p.set_defaults(func=cmd_train_ref)

    p = sub.add_parser("evaluate", help="score a model on a validation fold")
    p.add_argument("manifest")
    p.add_argument("folds")
    p.add_argument("--model", required=True)
    p.add_argument("--fold", type=int, help="validation fold id (default 1)")
    p.add_argument("--out", default="eval_out")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="explain one prediction with overlays")
    p.add_argument("image")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="explain_out")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-segments", dest="n_segments", type=int)
    p.add_argument("--compactness", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--positive-only", dest="positive_only", action="store_const",
                   const=True)
    _add_common(p)
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return _EXIT_MODEL
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
