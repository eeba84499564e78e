import math

import numpy as np
import pytest

from cardiotox.errors import InvalidInputError, TrainingDivergedError
from cardiotox.learners import TrainConfig, mlp_init, mlp_predict, mlp_predict_proba, mlp_train
from cardiotox.learners.mlp import (
    _backward,
    _forward,
    _gradient_list,
    _loss_from_probs,
    _parameter_refs,
)

from conftest import labeled, make_blobs


def finite_difference_check(model, x, y, weight_decay, h=1e-5):
    # The 1e-6 floor sits above the central-difference noise level
    # (~1e-11 for O(1) losses at h=1e-5); gradients above it are compared
    # at full relative precision.
    def loss():
        probs, _ = _forward(model, x, train=True, rng=None)
        return _loss_from_probs(probs, y, model, weight_decay)

    _, cache = _forward(model, x, train=True, rng=None)
    grads = _gradient_list(model, *_backward(model, cache, y, weight_decay))
    params = _parameter_refs(model)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss()
            flat[idx] = orig - h
            down = loss()
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(gflat[idx]), 1e-6)
            worst = max(worst, abs(fd - gflat[idx]) / scale)
    return worst


class TestInit:
    def test_biases_zero(self):
        model = mlp_init([5, 7, 3], "relu", seed=0)
        assert all(np.all(b == 0.0) for b in model.biases)

    def test_kaiming_std_within_15_percent(self):
        samples = []
        for seed in range(10):
            model = mlp_init([40, 2], "relu", seed=seed)
            samples.append(model.weights[0].reshape(-1))
        std = np.std(np.concatenate(samples))
        assert abs(std - math.sqrt(2.0 / 40.0)) <= 0.15 * math.sqrt(2.0 / 40.0)

    def test_xavier_bounds_and_spread(self):
        limit = math.sqrt(6.0 / (40 + 2))
        samples = []
        for seed in range(10):
            model = mlp_init([40, 2], "sigmoid", seed=seed)
            w = model.weights[0]
            assert np.all(np.abs(w) <= limit)
            samples.append(w.reshape(-1))
        std = np.std(np.concatenate(samples))
        assert abs(std - limit / math.sqrt(3.0)) <= 0.15 * limit / math.sqrt(3.0)

    def test_shapes_chain(self):
        model = mlp_init([4, 8, 5, 3], "relu", seed=1)
        assert [w.shape for w in model.weights] == [(4, 8), (8, 5), (5, 3)]
        assert model.layer_sizes == (4, 8, 5, 3)

    def test_invalid_sizes_rejected(self):
        with pytest.raises(InvalidInputError):
            mlp_init([4, -2, 3], "relu", seed=0)
        with pytest.raises(InvalidInputError):
            mlp_init([4], "relu", seed=0)

    def test_unknown_activation(self):
        with pytest.raises(InvalidInputError):
            mlp_init([2, 2], "tanh", seed=0)

    def test_batchnorm_layers_created(self):
        model = mlp_init([4, 8, 5, 3], "relu", seed=1, batchnorm=True)
        assert len(model.batchnorm) == 2
        assert model.batchnorm[0].gamma.shape == (8,)


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "sigmoid"])
    def test_finite_difference_no_extras(self, rng, activation):
        model = mlp_init([4, 5, 3], activation, seed=1)
        x = rng.normal(size=(7, 4))
        y = rng.integers(0, 3, size=7)
        assert finite_difference_check(model, x, y, weight_decay=0.01) < 1e-4

    @pytest.mark.parametrize("activation", ["relu", "sigmoid"])
    def test_finite_difference_with_batchnorm(self, rng, activation):
        model = mlp_init([4, 6, 3], activation, seed=2, batchnorm=True)
        x = rng.normal(size=(9, 4))
        y = rng.integers(0, 3, size=9)
        assert finite_difference_check(model, x, y, weight_decay=0.005) < 1e-4


class TestTraining:
    def blob_sets(self, rng):
        x, y = make_blobs(rng, [[0.0, 0.0], [4.0, 4.0]], 200, scale=0.5)
        order = rng.permutation(len(y))
        dataset = labeled(x[order], y[order])
        train = dataset.subset(np.arange(320))
        val = dataset.subset(np.arange(320, 400))
        return train, val

    def test_blob_validation_accuracy(self, rng):
        train, val = self.blob_sets(rng)
        model = mlp_init([2, 40, 2], "relu", seed=0)
        result = mlp_train(model, train, val, TrainConfig(epochs=200, batch_size=64, seed=0))
        assert max(result.val_accuracy) >= 0.98
        assert result.best_epoch >= 1
        # returned checkpoint reproduces the recorded best validation loss
        probs = mlp_predict_proba(result.model, val.matrix)
        from cardiotox.learners.mlp import _loss_from_probs

        loss = _loss_from_probs(probs, val.labels, result.model, 1e-4)
        assert loss == pytest.approx(min(result.val_loss), abs=1e-9)

    def test_zero_learning_rate_keeps_parameters(self, rng):
        train, val = self.blob_sets(rng)
        model = mlp_init([2, 8, 2], "relu", seed=3)
        before = [w.copy() for w in model.weights] + [b.copy() for b in model.biases]
        result = mlp_train(model, train, val, TrainConfig(learning_rate=0.0, epochs=3, batch_size=64))
        after = list(result.model.weights) + list(result.model.biases)
        assert all(np.array_equal(a, b) for a, b in zip(before, after))

    def test_divergence_names_epoch(self, rng):
        train, val = self.blob_sets(rng)
        model = mlp_init([2, 8, 2], "relu", seed=3)
        with pytest.raises(TrainingDivergedError) as info:
            mlp_train(model, train, val, TrainConfig(learning_rate=1e300, epochs=5, batch_size=64))
        assert info.value.epoch >= 1

    def test_softmax_rows_sum_to_one(self, rng):
        model = mlp_init([3, 6, 4], "relu", seed=0)
        probs = mlp_predict_proba(model, rng.normal(size=(50, 3)))
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-9

    def test_eval_mode_deterministic_despite_dropout(self, rng):
        model = mlp_init([3, 16, 2], "relu", seed=0, dropout_rate=0.5)
        x = rng.normal(size=(20, 3))
        a = mlp_predict_proba(model, x)
        b = mlp_predict_proba(model, x)
        assert np.array_equal(a, b)

    def test_dropout_noise_in_train_mode(self, rng):
        model = mlp_init([3, 16, 2], "relu", seed=0, dropout_rate=0.5)
        x = rng.normal(size=(20, 3))
        gen = np.random.default_rng(1)
        a, _ = _forward(model, x, train=True, rng=gen)
        b, _ = _forward(model, x, train=True, rng=gen)
        assert not np.array_equal(a, b)

    def test_batchnorm_normalizes_in_train_mode(self, rng):
        model = mlp_init([4, 32, 2], "relu", seed=1, batchnorm=True)
        x = rng.normal(loc=3.0, scale=2.0, size=(256, 4))
        _, cache = _forward(model, x, train=True, rng=None)
        z_norm = cache["z_norm"][0]
        assert np.max(np.abs(z_norm.mean(axis=0))) < 1e-6
        assert np.max(np.abs(z_norm.var(axis=0) - 1.0)) < 1e-4

    def test_batchnorm_training_converges(self, rng):
        train, val = self.blob_sets(rng)
        model = mlp_init([2, 16, 2], "relu", seed=0, batchnorm=True)
        result = mlp_train(model, train, val, TrainConfig(epochs=60, batch_size=64, seed=0))
        assert max(result.val_accuracy) >= 0.95

    def test_empty_validation_rejected(self, rng):
        train, _ = self.blob_sets(rng)
        empty = train.subset(np.array([], dtype=int))
        model = mlp_init([2, 4, 2], "relu", seed=0)
        with pytest.raises(InvalidInputError):
            mlp_train(model, train, empty, TrainConfig(epochs=1))

    def test_predict_labels(self, rng):
        train, val = self.blob_sets(rng)
        model = mlp_init([2, 24, 2], "relu", seed=1)
        result = mlp_train(model, train, val, TrainConfig(epochs=80, batch_size=64, seed=1))
        preds = mlp_predict(result.model, val.matrix)
        assert np.mean(preds == val.labels) >= 0.95

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(InvalidInputError):
            TrainConfig(batch_size=0)
