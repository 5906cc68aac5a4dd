"""Acceptance checklist.

One test per shipped guarantee, in order; each prints a PASS line with
the measured numbers so a -s run reads as the release checklist.  The
slow entries (stratification sweep, reference training, end-to-end
explanation study) enforce their wall-clock budgets too.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import make_bmp_bytes, separable_cell_images
from limecell.augment import (
    AugmentConfig,
    augment_sample,
    flip_horizontal,
    flip_vertical,
    transpose_gate,
)
from limecell.cli import main
from limecell.explain import explain, fit_surrogate, kernel_weights, sample_masks
from limecell.imageops import bilinear_resize
from limecell.metrics import (
    EPS_LOGLOSS,
    accuracy,
    confusion,
    f1,
    log_loss,
    onehot,
    precision,
    recall,
)
from limecell.model import (
    ReferenceNetConfig,
    grad_check,
    init_parameters,
    save_parameters,
    train_reference,
)
import limecell.model as model_mod
from limecell.rng import RandomStream
from limecell.sampling import compute_class_weights, stratified_kfold
from limecell.slic import SlicParams, slic_segment


def test_criterion_01_class_weights_match_published_values():
    labels = np.array([0] * 3389 + [1] * 7272)
    cw = compute_class_weights(labels)
    got = {c: repr(w) for c, w in cw.weights.items()}
    assert got[0] == "1.5728828562997934"
    assert got[1] == "0.7330170517051705"
    print(f"PASS criterion 1: class weights {got[0]} / {got[1]} digit-exact")


def test_criterion_02_metrics_match_brute_force_oracle():
    def oracle(y, p1):
        tp = fp = tn = fn = 0
        for t, p in zip(y, p1):
            pred = 1 if p >= 0.5 else 0
            if pred == 1 and t == 1:
                tp += 1
            elif pred == 1:
                fp += 1
            elif t == 0:
                tn += 1
            else:
                fn += 1
        total = tp + fp + tn + fn
        acc = (tp + tn) / total
        prec = tp / (tp + fp) if tp else 0.0
        rec = tp / (tp + fn) if tp else 0.0
        f = 2 * prec * rec / (prec + rec) if tp else 0.0
        ll = 0.0
        for t, p in zip(y, p1):
            q = p if t == 1 else 1 - p
            q = min(max(q, EPS_LOGLOSS), 1 - EPS_LOGLOSS)
            ll -= math.log(q)
        return acc, prec, rec, f, ll / len(y)

    rs = np.random.RandomState(987)
    worst = 0.0
    for _ in range(1000):
        n = int(rs.randint(1, 60))
        y = rs.randint(0, 2, size=n)
        p1 = rs.rand(n)
        probs = np.column_stack([1 - p1, p1])
        c = confusion(y, probs)
        got = (accuracy(c), precision(c), recall(c), f1(c),
               log_loss(onehot(y), probs))
        want = oracle(y.tolist(), p1.tolist())
        worst = max(worst, max(abs(g - w) for g, w in zip(got, want)))
    assert worst <= 1e-12

    coin = log_loss(onehot(np.array([0, 1, 1, 0])), np.full((4, 2), 0.5))
    assert abs(coin - math.log(2.0)) <= 1e-12
    print(f"PASS criterion 2: 1000 oracle trials, worst deviation {worst:.2e}; "
          f"coin-flip log loss = ln 2 within {abs(coin - math.log(2.0)):.2e}")


def test_criterion_03_stratified_folds_balanced_over_random_sweep():
    rs = np.random.RandomState(24601)
    t0 = time.perf_counter()
    for trial in range(500):
        k = int(rs.randint(2, 6))
        while True:
            n = int(rs.randint(4 * k, 2001))
            labels = rs.randint(0, 2, size=n)
            counts = np.bincount(labels, minlength=2)
            if counts.min() >= k:
                break
        fa = stratified_kfold(labels, k=k, seed=trial)
        assert sorted(np.flatnonzero(fa.fold_of >= -1).tolist()) == list(range(n))
        sizes = np.bincount(fa.fold_of, minlength=k)
        assert sizes.sum() == n
        assert sizes.max() - sizes.min() <= 1
        for c in (0, 1):
            per_fold = np.bincount(fa.fold_of[labels == c], minlength=k)
            assert per_fold.max() - per_fold.min() <= 1
    dt = time.perf_counter() - t0
    assert dt < 10.0
    print(f"PASS criterion 3: 500 random splits balanced within +/-1 in {dt:.2f}s")


def test_criterion_04_augmentation_involutions_gate_rate_and_bounds():
    rs = np.random.RandomState(5150)
    for _ in range(50):
        t = rs.rand(rs.randint(2, 32), rs.randint(2, 32), 3).astype(np.float32)
        assert np.array_equal(flip_vertical(flip_vertical(t)), t)
        assert np.array_equal(flip_horizontal(flip_horizontal(t)), t)
        assert np.array_equal(transpose_gate(transpose_gate(t, 0.9), 0.9), t)

    probe = np.zeros((2, 3, 3), dtype=np.float32)
    draws = RandomStream(777).uniform(size=10000)
    fired = sum(1 for u in draws if transpose_gate(probe, float(u)).shape == (3, 2, 3))
    rate = fired / 10000
    assert abs(rate - 0.25) <= 0.02

    cfg = AugmentConfig()
    base = rs.rand(299, 299, 3).astype(np.float32)
    root = RandomStream(4242)
    for i in range(150):
        out = augment_sample(base, root.substream(i), cfg)
        assert out.shape == (299, 299, 3)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0
    print(f"PASS criterion 4: involutions exact; transpose rate {rate:.4f}; "
          "150 augmented outputs stayed in [0,1] at 299x299x3")


def test_criterion_05_training_gradients_and_synthetic_convergence(monkeypatch):
    cfg = ReferenceNetConfig(input_dims=(8, 8, 3), hidden_units=6)
    rs = np.random.RandomState(31)
    x = rs.rand(16, cfg.flat_dim)
    y = rs.randint(0, 2, size=16)
    cw = compute_class_weights(y)
    params = init_parameters(cfg, RandomStream(3))
    worst = grad_check(params, (x, y), cw, n_coords=150)
    assert worst < 1e-4

    original = model_mod._loss_and_grads

    def doubled(*args, **kwargs):
        loss, grads = original(*args, **kwargs)
        return loss, {k: 2.0 * v for k, v in grads.items()}

    monkeypatch.setattr(model_mod, "_loss_and_grads", doubled)
    mutant = grad_check(params, (x, y), cw, n_coords=150)
    monkeypatch.undo()
    assert mutant > 0.5

    images = separable_cell_images(n=200, size=32)
    train, val = images[:160], images[160:]
    weights = compute_class_weights(np.array([im.label for im in train]))
    train_cfg = ReferenceNetConfig(input_dims=(32, 32, 3), epochs=200)
    t0 = time.perf_counter()
    _, hist = train_reference(train, val, train_cfg, weights, RandomStream(0, 4))
    dt = time.perf_counter() - t0
    best = max(hist.accuracy)
    first = next(i + 1 for i, a in enumerate(hist.accuracy) if a >= 0.99)
    assert best >= 0.99
    assert dt < 60.0
    print(f"PASS criterion 5: grad check {worst:.2e} (<1e-4), x2 mutant {mutant:.2f} "
          f"(>0.5); bright/dark set hit >=99% at epoch {first} ({dt:.1f}s/200 epochs)")


def test_criterion_06_surrogate_solver_oracle_and_affine_recovery():
    def dense_oracle(masks, responses, weights, alpha):
        n, s = masks.shape
        x = np.column_stack([np.ones(n), masks]).astype(np.float64)
        sw = np.sqrt(weights)
        rows = [x * sw[:, None]]
        targets = [responses * sw]
        if alpha > 0:
            aug = np.zeros((s, s + 1))
            aug[:, 1:] = math.sqrt(alpha) * np.eye(s)
            rows.append(aug)
            targets.append(np.zeros(s))
        beta, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(targets),
                                   rcond=None)
        return beta

    worst = 0.0
    rs = np.random.RandomState(1618)
    cases = [(12, 4096)] + [(int(rs.randint(2, 13)), int(rs.randint(20, 4097)))
                            for _ in range(20)]
    for i, (s, n) in enumerate(cases):
        stream = RandomStream(9000 + i)
        masks = sample_masks(s, n, stream)
        responses = stream.uniform(0, 1, n)
        weights = kernel_weights(masks)
        fit = fit_surrogate(masks, responses, weights, alpha=1.0)
        beta = dense_oracle(masks, responses, weights, 1.0)
        dev = max(abs(fit.intercept - beta[0]),
                  float(np.max(np.abs(fit.coefficients - beta[1:]))))
        worst = max(worst, dev)
    assert worst <= 1e-8

    stream = RandomStream(55)
    s = 10
    masks = sample_masks(s, 2000, stream)
    true_coefs = stream.uniform(-1.0, 1.0, s)
    true_intercept = float(stream.uniform(-0.5, 0.5))
    responses = true_intercept + masks @ true_coefs
    weights = kernel_weights(masks)
    fit = fit_surrogate(masks, responses, weights, alpha=1e-8)
    coef_err = float(np.max(np.abs(fit.coefficients - true_coefs)))
    int_err = abs(fit.intercept - true_intercept)
    assert coef_err <= 1e-6 and int_err <= 1e-6
    assert fit.r2 >= 0.999
    print(f"PASS criterion 6: solver vs oracle worst {worst:.2e} (<=1e-8); affine "
          f"recovery err {max(coef_err, int_err):.2e} (<=1e-6), R2 {fit.r2:.6f}")


def test_criterion_07_planted_region_ranks_first():
    rs = np.random.RandomState(20240501)
    img = bilinear_resize(rs.rand(10, 10, 3), 100, 100)
    params = SlicParams(n_segments=50)
    seg = slic_segment(img, params)
    region_id = int(seg.seg_of[50, 50])
    region = seg.seg_of == region_id

    class PlantedClassifier:
        """p(class 1) = fraction of the target region left unperturbed."""

        def __init__(self, original, region_mask):
            self.original = np.asarray(original, dtype=np.float32)
            self.region = region_mask

        def predict_proba(self, batch):
            batch = np.asarray(batch, dtype=np.float32)
            kept = np.all(np.abs(batch - self.original[None]) < 1e-6, axis=3)
            p1 = kept[:, self.region].mean(axis=1)
            return np.column_stack([1.0 - p1, p1])

    clf = PlantedClassifier(img, region)
    t0 = time.perf_counter()
    wins = 0
    for run in range(100):
        result = explain(img, clf, params, n_samples=1000, sigma=0.25, alpha=1.0,
                         stream=RandomStream(run), seg=seg)
        if result.ranked_segments()[0] == region_id:
            wins += 1
    dt = time.perf_counter() - t0
    assert wins >= 95
    assert dt < 120.0
    print(f"PASS criterion 7: planted segment ranked first in {wins}/100 runs "
          f"({dt:.1f}s, {seg.n_segments} segments)")


def test_criterion_08_explain_artifacts_byte_identical(tmp_path, capsys):
    data, _ = make_bmp_bytes(48, 48, seed=101, base=150)
    image = tmp_path / "cell.bmp"
    image.write_bytes(data)
    cfg = ReferenceNetConfig(input_dims=(24, 24, 3), hidden_units=4)
    model = tmp_path / "model.npz"
    save_parameters(init_parameters(cfg, RandomStream(0)), cfg, model)

    args = ["explain", str(image), "--model", str(model), "--seed", "7",
            "--n-samples", "100", "--n-segments", "12", "--iterations", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    names = ["explanation.json", "segments.png", "boundaries.png", "heatmap.png",
             "heatmap_positive.png", "run.json"]
    for name in names:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, f"{name} differs between identically configured runs"
    print(f"PASS criterion 8: {len(names)} artifacts byte-identical across reruns")


def test_criterion_09_protocol_defaults_visible_in_metadata(bmp_tree, tmp_path,
                                                            capsys):
    root = bmp_tree(n_per_class=6, size=32)
    manifest = tmp_path / "manifest.jsonl"
    folds = tmp_path / "folds.json"
    out_dir = tmp_path / "train_out"
    assert main(["ingest", str(root), "--out", str(manifest)]) == 0
    assert main(["split", str(manifest), "--out", str(folds)]) == 0
    assert main(["train-ref", str(manifest), str(folds), "--out", str(out_dir),
                 "--input-size", "16", "--hidden-units", "2"]) == 0
    capsys.readouterr()

    split_meta = json.loads(folds.read_text())
    assert split_meta["k"] == 3
    assert split_meta["meta"]["k"] == 3

    record = json.loads((out_dir / "run.json").read_text())
    meta = record["meta"]
    assert meta["k"] == 3
    assert meta["epochs"] == 35
    assert meta["batch_size"] == 32
    assert meta["fold"] == 1
    info = json.loads((out_dir / "report.json").read_text())
    assert info["meta"]["epochs"] == 35

    lines = (out_dir / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,accuracy,f1,val_loss,val_accuracy,val_f1"
    assert len(lines) == 36  # header + one row per default epoch
    print("PASS criterion 9: defaults k=3, 35 epochs, batch 32, fold 1 visible in "
          "metadata; history.csv carries exactly the six series")
