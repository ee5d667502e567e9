from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncwo.neural import (
    LINEAR,
    RELU,
    Adam,
    Hyperparams,
    Mlp,
    TrainingDivergedError,
    build_mlp,
    forward,
    gradient_check,
    loss_and_grad,
    train,
    weighted_mse,
)

SMALL = Hyperparams(input_units=8, n_layers=1, units=(4,), dropout_rate=0.0,
                    dropout_rates=(0.0,), epochs=5, batch_size=16)


def _toy(n=400, d=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n, d)).astype(float)
    y = 0.2 + 0.3 * x[:, 0] + 0.2 * x[:, 1] * x[:, 2] + rng.normal(0, 0.05, n)
    return x, y, np.ones(n)


def test_hyperparams_json_roundtrip(tmp_path):
    hp = Hyperparams(input_units=16, units=(8, 4), dropout_rates=(0.2, 0.0))
    path = tmp_path / "hp.json"
    path.write_text(json.dumps(hp.to_dict()))
    assert Hyperparams.from_json(path) == hp
    assert Hyperparams.from_json(json.dumps(hp.to_dict())) == hp


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(input_units=0),
        dict(n_layers=1),  # units length mismatch
        dict(dropout_rate=1.0),
        dict(learning_rate=-1e-3),
        dict(val_fraction=0.0),
    ],
)
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        Hyperparams(**kwargs)


def test_hyperparams_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        Hyperparams.from_dict({"width": 3})


def test_default_architecture():
    net = build_mlp(5, Hyperparams(), 0)
    assert net.widths == (5, 64, 32, 16, 1)
    assert net.activations == (LINEAR, RELU, RELU, LINEAR)
    assert net.dropout == (0.1, 0.1, 0.1, 0.0)
    assert all(np.all(layer.bias == 0) for layer in net.layers)


def test_layers_are_views_of_flat_buffer():
    net = build_mlp(2, SMALL, 0)
    net.params[:] = 0.0
    assert all(np.all(layer.weight == 0) for layer in net.layers)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check_random_architectures(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    widths = (int(rng.integers(1, 6)), *rng.integers(1, 17, size=depth).tolist(), 1)
    acts = (*[RELU] * depth, LINEAR)
    net = Mlp(widths, acts, (0.0,) * (depth + 1))
    net.params[:] = rng.normal(0, 0.5, net.n_params)
    x = rng.normal(size=(20, widths[0]))
    y = rng.normal(size=20)
    w = rng.uniform(0.2, 2.0, 20)
    assert gradient_check(net, x, y, w, seed=seed) < 1e-4


def test_gradient_check_ignores_dropout_setting():
    hp = Hyperparams(input_units=6, n_layers=1, units=(5,), dropout_rates=(0.5,), dropout_rate=0.5)
    net = build_mlp(3, hp, 1)
    x, y, w = _toy(30)
    assert gradient_check(net, x, y, w) < 1e-4


def test_loss_and_grad_matches_weighted_mse():
    net = build_mlp(3, SMALL, 2)
    x, y, w = _toy(50)
    w = np.linspace(0.5, 1.5, 50)
    loss, _ = loss_and_grad(net, x, y, w)
    assert loss == pytest.approx(weighted_mse(forward(net, x), y, w), rel=1e-12)


def test_adam_first_step():
    # bias-corrected first step moves each coordinate by lr * g / (|g| + eps)
    p = np.array([1.0])
    Adam(1, 1e-3).step(p, np.array([2.0]))
    assert p[0] == pytest.approx(0.999000000005, abs=1e-15)


def test_adam_zero_lr_is_noop():
    p = np.array([0.3, -0.2])
    Adam(2, 0.0).step(p, np.array([1.0, -5.0]))
    np.testing.assert_array_equal(p, [0.3, -0.2])


def test_inference_ignores_dropout():
    net = build_mlp(3, Hyperparams(), 0)
    x, _, _ = _toy(20)
    np.testing.assert_array_equal(forward(net, x), forward(net, x))
    np.testing.assert_array_equal(forward(net, x), forward(net.without_dropout(), x))


def test_training_forward_drops_units():
    net = build_mlp(3, Hyperparams(dropout_rate=0.5), 0)
    x, _, _ = _toy(20)
    assert not np.allclose(forward(net, x, training=True, seed=1), forward(net, x))
    np.testing.assert_array_equal(
        forward(net, x, training=True, seed=1), forward(net, x, training=True, seed=1)
    )


def test_inverted_dropout_preserves_expectation_before_linear_layer():
    # dropout feeding only linear layers: the mean over masks is the inference output
    net = Mlp((3, 8, 1), (LINEAR, LINEAR), (0.3, 0.0))
    net.params[:] = np.random.default_rng(0).normal(size=net.n_params)
    x = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    draws = np.stack([forward(net, x, training=True, seed=s) for s in range(4000)])
    se = draws.std(axis=0) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - forward(net, x)) < 4 * se)


def test_train_is_deterministic():
    x, y, w = _toy()
    a, ra = train(build_mlp(3, SMALL, 0), x, y, w, SMALL, 5)
    b, rb = train(build_mlp(3, SMALL, 0), x, y, w, SMALL, 5)
    np.testing.assert_array_equal(a.params, b.params)
    assert ra == rb


def test_train_does_not_mutate_input_network():
    net = build_mlp(3, SMALL, 0)
    before = net.params.copy()
    x, y, w = _toy()
    train(net, x, y, w, SMALL, 0)
    np.testing.assert_array_equal(net.params, before)


def test_train_zero_learning_rate_keeps_parameters():
    hp = Hyperparams(**{**SMALL.to_dict(), "learning_rate": 0.0})
    net = build_mlp(3, hp, 0)
    x, y, w = _toy()
    fitted, _ = train(net, x, y, w, hp, 0)
    np.testing.assert_array_equal(fitted.params, net.params)


def test_train_fits_interaction():
    hp = Hyperparams(input_units=16, n_layers=1, units=(8,), dropout_rate=0.0,
                     dropout_rates=(0.0,), epochs=200, learning_rate=1e-2)
    x, y, w = _toy(2000)
    net, report = train(build_mlp(3, hp, 0), x, y, w, hp, 0)
    grid = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 1], [1, 1, 1]], dtype=float)
    np.testing.assert_allclose(forward(net, grid), [0.2, 0.5, 0.4, 0.7], atol=0.03)
    assert report.best_val_loss < 0.004


def test_early_stopping_returns_best_parameters():
    hp = Hyperparams(**{**SMALL.to_dict(), "epochs": 300, "patience": 3, "learning_rate": 3e-2})
    x, y, w = _toy(300)
    net, report = train(build_mlp(3, hp, 0), x, y, w, hp, 0)
    vals = [v for _, v in report.history]
    assert report.stopped_early
    assert report.epochs_run == report.best_epoch + hp.patience
    assert report.best_val_loss == min(vals)
    # recompute validation loss of the returned parameters
    perm = np.random.default_rng(0).permutation(300)[: int(300 * hp.val_fraction)]
    assert weighted_mse(forward(net, x[perm]), y[perm], w[perm]) == pytest.approx(min(vals), rel=1e-12)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_is_reported():
    hp = Hyperparams(**{**SMALL.to_dict(), "learning_rate": 1e300, "epochs": 50})
    x, y, w = _toy()
    with pytest.raises(TrainingDivergedError, match="learning_rate"):
        train(build_mlp(3, hp, 0), x, y * 1e300, w, hp, 0)


@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 5), seed=st.integers(0, 1000))
def test_integer_weights_equal_row_duplication_in_loss(k, seed):
    net = build_mlp(2, SMALL, seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    w = np.ones(6)
    w[0] = k
    rep = np.concatenate([np.zeros(k - 1, dtype=int), np.arange(6)])
    la, ga = loss_and_grad(net, x, y, w)
    lb, gb = loss_and_grad(net, x[rep], y[rep], np.ones(rep.size))
    assert la == pytest.approx(lb, rel=1e-10)
    np.testing.assert_allclose(ga, gb, rtol=1e-8, atol=1e-12)
