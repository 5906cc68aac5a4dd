"""Reference network: initialization, gradients, training dynamics, and
parameter archives."""

import math

import numpy as np
import pytest

import limecell.model as model_mod
from conftest import separable_cell_images
from limecell.errors import DataError, ModelError
from limecell.model import (
    Classifier,
    Parameters,
    ReferenceNet,
    ReferenceNetConfig,
    grad_check,
    init_parameters,
    load_parameters,
    save_parameters,
    train_reference,
    weighted_bce,
)
from limecell.rng import RandomStream
from limecell.sampling import compute_class_weights

SMALL = ReferenceNetConfig(input_dims=(8, 8, 3), hidden_units=5)


def random_batch(n=12, cfg=SMALL, seed=3):
    rs = np.random.RandomState(seed)
    x = rs.rand(n, cfg.flat_dim)
    y = rs.randint(0, 2, size=n)
    return x, y


class TestConfig:
    def test_defaults(self):
        cfg = ReferenceNetConfig()
        assert cfg.input_dims == (299, 299, 3)
        assert cfg.hidden_units == 32
        assert cfg.learning_rate == 1e-3
        assert cfg.epochs == 35
        assert cfg.batch_size == 32
        assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)

    def test_flat_dim(self):
        assert ReferenceNetConfig().flat_dim == 299 * 299 * 3
        assert SMALL.flat_dim == 192

    def test_validation(self):
        with pytest.raises(DataError):
            ReferenceNetConfig(hidden_units=0)
        with pytest.raises(DataError):
            ReferenceNetConfig(learning_rate=0.0)
        with pytest.raises(DataError):
            ReferenceNetConfig(batch_size=0)
        with pytest.raises(DataError):
            ReferenceNetConfig(input_dims=(10, 10, 1))


class TestInit:
    def test_bounds_scale_with_fan_in(self):
        params = init_parameters(SMALL, RandomStream(0))
        lim1 = 1.0 / math.sqrt(SMALL.flat_dim)
        lim2 = 1.0 / math.sqrt(SMALL.hidden_units)
        assert np.all(np.abs(params.w1) <= lim1)
        assert np.all(np.abs(params.b1) <= lim1)
        assert np.all(np.abs(params.w2) <= lim2)
        assert np.all(np.abs(params.b2) <= lim2)
        assert params.w1.shape == (192, 5)
        assert params.w2.shape == (5, 1)

    def test_deterministic(self):
        a = init_parameters(SMALL, RandomStream(4))
        b = init_parameters(SMALL, RandomStream(4))
        assert np.array_equal(a.w1, b.w1) and np.array_equal(a.b2, b.b2)

    def test_non_finite_tensor_rejected(self):
        with pytest.raises(ModelError, match="w1"):
            Parameters(
                w1=np.array([[np.nan]]),
                b1=np.zeros(1),
                w2=np.zeros((1, 1)),
                b2=np.zeros(1),
            )


class TestWeightedBce:
    def test_uniform_half_is_ln_two(self):
        p = np.full(6, 0.5)
        y = np.array([0, 1, 0, 1, 0, 1], dtype=np.float64)
        assert abs(weighted_bce(p, y, None) - math.log(2.0)) < 1e-12

    def test_matches_naive_weighted_mean(self):
        rs = np.random.RandomState(0)
        p = rs.rand(40)
        y = rs.randint(0, 2, size=40).astype(np.float64)
        cw = compute_class_weights(y.astype(np.int64))
        got = weighted_bce(p, y, cw)
        acc = 0.0
        for pi, yi in zip(p, y):
            term = yi * math.log(pi) + (1 - yi) * math.log(1 - pi)
            acc += cw.weights[int(yi)] * term
        assert got == pytest.approx(-acc / 40, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            weighted_bce(np.zeros(3), np.zeros(4), None)


class TestGradCheck:
    def test_analytic_matches_finite_differences(self):
        x, y = random_batch()
        params = init_parameters(SMALL, RandomStream(1))
        cw = compute_class_weights(y)
        worst = grad_check(params, (x, y), cw, n_coords=120)
        assert worst < 1e-4

    def test_doubled_gradient_is_caught(self, monkeypatch):
        x, y = random_batch()
        params = init_parameters(SMALL, RandomStream(1))
        cw = compute_class_weights(y)
        original = model_mod._loss_and_grads

        def doubled(*args, **kwargs):
            loss, grads = original(*args, **kwargs)
            return loss, {k: 2.0 * v for k, v in grads.items()}

        monkeypatch.setattr(model_mod, "_loss_and_grads", doubled)
        worst = grad_check(params, (x, y), cw, n_coords=120)
        assert worst > 0.5

    def test_empty_batch_rejected(self):
        params = init_parameters(SMALL, RandomStream(1))
        cw = compute_class_weights(np.array([0, 1]))
        with pytest.raises(DataError):
            grad_check(params, (np.zeros((0, SMALL.flat_dim)), np.zeros(0, dtype=int)), cw)


class TestTraining:
    CFG = ReferenceNetConfig(input_dims=(32, 32, 3), hidden_units=16, epochs=12,
                             learning_rate=1e-2, batch_size=16)

    def split(self, n=120):
        images = separable_cell_images(n=n, size=32)
        return images[: int(n * 0.8)], images[int(n * 0.8):]

    def test_learns_separable_data(self):
        train, val = self.split()
        labels = np.array([im.label for im in train])
        cw = compute_class_weights(labels)
        params, history = train_reference(train, val, self.CFG, cw, RandomStream(0, 4))
        assert history.epochs == self.CFG.epochs
        assert history.accuracy[-1] >= 0.99
        assert history.val_accuracy[-1] >= 0.9

    def test_history_has_six_series(self):
        train, val = self.split(40)
        cfg = ReferenceNetConfig(input_dims=(32, 32, 3), hidden_units=4, epochs=2)
        cw = compute_class_weights(np.array([im.label for im in train]))
        _, history = train_reference(train, val, cfg, cw, RandomStream(1, 4))
        rows = history.to_rows()
        assert len(rows) == 2
        assert len(rows[0]) == 7
        assert rows[0][0] == 1 and rows[1][0] == 2

    def test_deterministic_given_stream(self):
        train, val = self.split(40)
        cfg = ReferenceNetConfig(input_dims=(32, 32, 3), hidden_units=4, epochs=2)
        cw = compute_class_weights(np.array([im.label for im in train]))
        p1, h1 = train_reference(train, val, cfg, cw, RandomStream(5, 4))
        p2, h2 = train_reference(train, val, cfg, cw, RandomStream(5, 4))
        assert np.array_equal(p1.w1, p2.w1)
        assert h1.loss == h2.loss

    def test_zero_epochs_returns_init(self):
        train, val = self.split(20)
        cfg = ReferenceNetConfig(input_dims=(32, 32, 3), hidden_units=4, epochs=0)
        cw = compute_class_weights(np.array([im.label for im in train]))
        params, history = train_reference(train, val, cfg, cw, RandomStream(2, 4))
        expected = init_parameters(cfg, RandomStream(2, 4).substream(0))
        assert np.array_equal(params.w1, expected.w1)
        assert history.epochs == 0

    def test_non_finite_loss_raises_with_location(self, monkeypatch):
        train, val = self.split(20)
        cfg = ReferenceNetConfig(input_dims=(32, 32, 3), hidden_units=4, epochs=1)
        cw = compute_class_weights(np.array([im.label for im in train]))
        original = model_mod._loss_and_grads

        def poisoned(*args, **kwargs):
            _, grads = original(*args, **kwargs)
            return float("nan"), grads

        monkeypatch.setattr(model_mod, "_loss_and_grads", poisoned)
        with pytest.raises(ModelError, match=r"epoch 1, batch 1"):
            train_reference(train, val, cfg, cw, RandomStream(0, 4))

    def test_empty_split_rejected(self):
        train, _ = self.split(20)
        cw = compute_class_weights(np.array([im.label for im in train]))
        with pytest.raises(DataError):
            train_reference(train, [], self.CFG, cw, RandomStream(0, 4))


class TestReferenceNet:
    def test_predict_proba_contract(self):
        cfg = ReferenceNetConfig(input_dims=(16, 16, 3), hidden_units=4)
        net = ReferenceNet(init_parameters(cfg, RandomStream(0)), cfg)
        batch = np.random.RandomState(0).rand(7, 16, 16, 3).astype(np.float32)
        probs = net.predict_proba(batch)
        assert probs.shape == (7, 2)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_resizes_foreign_dims(self):
        cfg = ReferenceNetConfig(input_dims=(16, 16, 3), hidden_units=4)
        net = ReferenceNet(init_parameters(cfg, RandomStream(0)), cfg)
        batch = np.random.RandomState(1).rand(2, 40, 28, 3).astype(np.float32)
        assert net.predict_proba(batch).shape == (2, 2)

    def test_satisfies_classifier_protocol(self):
        cfg = ReferenceNetConfig(input_dims=(16, 16, 3), hidden_units=4)
        net = ReferenceNet(init_parameters(cfg, RandomStream(0)), cfg)
        assert isinstance(net, Classifier)


class TestParameterArchive:
    def test_round_trip(self, tmp_path):
        cfg = ReferenceNetConfig(input_dims=(8, 8, 3), hidden_units=3, seed=11)
        params = init_parameters(cfg, RandomStream(11))
        path = tmp_path / "params.npz"
        save_parameters(params, cfg, path, meta={"seed": 11})
        loaded, loaded_cfg, info = load_parameters(path)
        assert np.array_equal(loaded.w1, params.w1)
        assert np.array_equal(loaded.b2, params.b2)
        assert loaded_cfg == cfg
        assert info["meta"]["seed"] == 11
        assert info["kind"] == "reference-net"

    def test_save_is_byte_deterministic(self, tmp_path):
        cfg = ReferenceNetConfig(input_dims=(8, 8, 3), hidden_units=3)
        params = init_parameters(cfg, RandomStream(0))
        a, b = tmp_path / "a.npz", tmp_path / "b.npz"
        save_parameters(params, cfg, a)
        save_parameters(params, cfg, b)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelError, match="not found"):
            load_parameters(tmp_path / "nope.npz")

    def test_foreign_archive_rejected(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, a=np.zeros(3))
        with pytest.raises(ModelError):
            load_parameters(path)
