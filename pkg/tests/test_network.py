import numpy as np
import pytest

from gbnn import layers as L
from gbnn.errors import ConfigError, DivergenceError
from gbnn.network import (Sequential, TrainConfig, build_network, clone_and_grow,
                          fit_classification_joint, fit_regression, net_backward, net_forward)
from gbnn.tensor import log_softmax_rows, softmax_rows
from oracles import max_rel_error, numeric_grad


def identity_head(k):
    head = L.Dense(k, k)
    head.params["W"] = np.eye(k)
    head.params["b"] = np.zeros(k)
    return head


def snapshot(net):
    return [{k: v.copy() for k, v in layer.params.items()} for layer in net.all_layers()]


def same_params(a, b):
    return all(np.array_equal(x[k], y[k]) for x, y in zip(a, b) for k in x)


def test_forward_composition_base_case(rng):
    x = rng.normal(size=(4, 3))
    out, _ = net_forward(Sequential([], identity_head(3)), x)
    np.testing.assert_array_equal(out, x)


def test_forward_frozen_identity_layer(rng):
    dense = identity_head(3)
    dense.frozen = True
    x = rng.normal(size=(4, 3))
    out, _ = net_forward(Sequential([dense], identity_head(3)), x)
    np.testing.assert_array_equal(out, x)


def test_forward_eval_deterministic(rng):
    net = build_network((6, 6, 1), 3, hidden=(5,), conv_filters=(2,), conv_dropouts=(0.3,), rng=rng)
    x = rng.normal(size=(3, 6, 6, 1))
    a, _ = net_forward(net, x, mode="eval")
    b, _ = net_forward(net, x, mode="eval")
    assert np.array_equal(a, b)


@pytest.mark.parametrize("loss", ["mse", "ce"])
def test_whole_network_gradcheck(rng, loss):
    net = build_network((4,), 3, hidden=(5, 4), rng=rng)
    x = rng.normal(size=(6, 4))
    t = rng.normal(size=(6, 3))
    y = np.eye(3)[rng.integers(0, 3, size=6)]

    def value():
        out, _ = net_forward(net, x, mode="train")
        if loss == "mse":
            return float(np.mean((out - t) ** 2))
        return float(-np.sum(y * log_softmax_rows(out)) / 6)

    out, caches = net_forward(net, x, mode="train")
    grad = 2 * (out - t) / out.size if loss == "mse" else (softmax_rows(out) - y) / 6
    for layer in net.all_layers():
        layer.zero_grad()
    gx = net_backward(net, grad, caches, stop=0)
    assert max_rel_error(gx, numeric_grad(value, x)) < 1e-4
    for layer in net.all_layers():
        for name, p in layer.params.items():
            assert max_rel_error(layer.grads[name], numeric_grad(value, p)) < 1e-4, (layer, name)


def test_fit_regression_already_optimal(rng):
    net = build_network((3,), 2, hidden=(4,), rng=rng)
    x = rng.normal(size=(10, 3))
    targets, _ = net_forward(net, x)
    log = fit_regression(net, x, targets, TrainConfig(epochs=5))
    assert log.initial_loss == 0.0 and log.epochs_run == 0


def test_fit_regression_linear_data(rng):
    x = rng.normal(size=(256, 3))
    a = rng.uniform(-1, 1, size=(3, 2))
    y = x @ a + np.array([0.5, -0.25])
    # closed-form least squares reproduces the data exactly
    design = np.column_stack([x, np.ones(256)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    assert np.mean((design @ coef - y) ** 2) < 1e-20
    net = Sequential([], L.Dense(3, 2, rng=rng))
    log = fit_regression(net, x, y, TrainConfig(epochs=200, batch_size=32, lr=0.01, seed=0))
    assert log.loss[-1] < 1e-3
    np.testing.assert_allclose(net.head.params["W"], coef[:3], atol=0.05)


def test_fit_regression_only_head_trains(rng):
    net = build_network((3,), 2, hidden=(4, 4), rng=rng)
    for layer in net.hidden_dense():
        layer.frozen = True
    before = snapshot(net)
    fit_regression(net, rng.normal(size=(20, 3)), rng.normal(size=(20, 2)),
                   TrainConfig(epochs=3, batch_size=8))
    after = snapshot(net)
    assert same_params(before[:-1], after[:-1])
    assert not np.array_equal(before[-1]["W"], after[-1]["W"])


def test_fit_regression_best_so_far_nonincreasing(rng):
    net = build_network((5,), 3, hidden=(8,), rng=rng)
    log = fit_regression(net, rng.normal(size=(64, 5)), rng.normal(size=(64, 3)),
                         TrainConfig(epochs=30, batch_size=16))
    best = log.best_so_far
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))


def test_fit_regression_early_stopping(rng):
    net = build_network((2,), 1, hidden=(3,), rng=rng)
    log = fit_regression(net, rng.normal(size=(32, 2)), rng.normal(size=(32, 1)),
                         TrainConfig(epochs=500, patience=2, min_delta=0.5))
    assert log.stopped_early and log.epochs_run < 500


def test_fit_regression_divergence_reports_epoch(rng):
    net = build_network((2,), 1, hidden=(3,), rng=rng)
    x = rng.normal(size=(8, 2))
    with pytest.raises(DivergenceError) as info:
        fit_regression(net, x, np.full((8, 1), 1e200), TrainConfig(epochs=3), iteration=4)
    assert info.value.epoch == 0 and info.value.iteration == 4


def test_fit_without_trainable_params_rejected(rng):
    net = Sequential([], L.Dense(2, 2, rng=rng))
    net.head.frozen = True
    with pytest.raises(ConfigError):
        fit_regression(net, np.ones((2, 2)), np.ones((2, 2)), TrainConfig(epochs=1))


def _blobs(rng, n=100):
    x = np.vstack([rng.normal([-2, -2], 0.5, size=(n, 2)), rng.normal([2, 2], 0.5, size=(n, 2))])
    y = np.repeat([0, 1], n)
    return x, y


def test_classification_separable_blobs(rng):
    from sklearn.linear_model import LogisticRegression
    x, y = _blobs(rng)
    assert LogisticRegression().fit(x, y).score(x, y) == 1.0   # separable per the oracle
    net = build_network((2,), 2, hidden=(8,), rng=rng)
    log = fit_classification_joint(net, x, np.eye(2)[y], TrainConfig(epochs=200, batch_size=32))
    out, _ = net_forward(net, x)
    assert np.mean(out.argmax(axis=1) == y) == 1.0
    assert log.accuracy[-1] == 1.0


def test_classification_initial_loss_is_log_k(rng):
    net = build_network((3,), 4, hidden=(5,), rng=rng)
    net.head.params["W"][:] = 0.0
    y = np.eye(4)[rng.integers(0, 4, size=12)]
    log = fit_classification_joint(net, rng.normal(size=(12, 3)), y, TrainConfig(epochs=1))
    assert log.initial_loss == pytest.approx(np.log(4), abs=1e-12)


def test_classification_label_permutation_symmetry(rng):
    x = rng.normal(size=(30, 3))
    y = np.eye(3)[rng.integers(0, 3, size=30)]
    perm = np.array([2, 0, 1])
    net = build_network((3,), 3, hidden=(4,), rng=np.random.default_rng(5))
    twin = net.copy()
    twin.head.params["W"] = twin.head.params["W"][:, perm].copy()
    twin.head.params["b"] = twin.head.params["b"][perm].copy()
    cfg = TrainConfig(epochs=5, batch_size=8)
    fit_classification_joint(net, x, y, cfg)
    fit_classification_joint(twin, x, y[:, perm], cfg)
    np.testing.assert_allclose(net_forward(twin, x)[0], net_forward(net, x)[0][:, perm],
                               rtol=1e-10, atol=1e-12)


def test_clone_and_grow_counts_and_freezes(rng):
    net = build_network((4,), 3, hidden=(5,), rng=rng)
    grown = clone_and_grow(net, 6, rng)
    dense = grown.hidden_dense()
    assert len(dense) == 2
    assert dense[0].frozen and not dense[1].frozen
    assert (dense[1].in_features, dense[1].out_features) == (5, 6)
    assert grown.head.in_features == 6 and grown.head.out_features == 3
    assert not grown.head.frozen
    assert isinstance(grown.layers[-1], L.ReLU)
    # the fresh stage starts by adding nothing
    assert not grown.head.params["W"].any() and not grown.head.params["b"].any()


def test_clone_and_grow_leaves_source_untouched(rng):
    net = build_network((4,), 3, hidden=(5,), rng=rng)
    x = rng.normal(size=(7, 4))
    before_params = snapshot(net)
    before_out = net_forward(net, x)[0]
    grown = clone_and_grow(net, 5, rng)
    fit_regression(grown, x, rng.normal(size=(7, 3)), TrainConfig(epochs=3))
    assert same_params(before_params, snapshot(net))
    assert np.array_equal(before_out, net_forward(net, x)[0])
    assert not any(layer.frozen for layer in net.all_layers())


def test_clone_and_grow_prefix_activations_match(rng):
    net = build_network((4,), 3, hidden=(5,), rng=rng)
    grown = clone_and_grow(net, 5, rng)
    x = rng.normal(size=(9, 4))
    prefix = len(net.layers)
    a = x
    for layer in net.layers:
        a, _ = layer.forward(a, mode="eval")
    b = x
    for layer in grown.layers[:prefix]:
        b, _ = layer.forward(b, mode="eval")
    assert np.array_equal(a, b)


def test_clone_and_grow_keeps_conv_trainable(rng):
    net = build_network((8, 8, 1), 2, hidden=(4,), conv_filters=(2,), conv_dropouts=(0.2,), rng=rng)
    grown = clone_and_grow(net, 4, rng)
    convs = [layer for layer in grown.layers if isinstance(layer, (L.Conv2D, L.BatchNorm))]
    assert convs and all(layer.trainable for layer in convs)


def test_build_network_full_conv_stack(rng):
    net = build_network((28, 28, 1), 10, hidden=(20,), conv_filters=(32, 64, 128), rng=rng)
    kinds = [layer.kind for layer in net.layers]
    block = ["conv2d", "relu", "conv2d", "relu", "batchnorm", "maxpool2d", "dropout"]
    assert kinds[:21] == block * 3
    assert kinds[21:] == ["flatten", "dense", "relu"]
    assert [layer.rate for layer in net.layers if isinstance(layer, L.Dropout)] == [0.2, 0.3, 0.4]
    assert net.hidden_dense()[0].in_features == 3 * 3 * 128


def test_build_network_zero_head(rng):
    net = build_network((4,), 3, hidden=(5,), rng=rng, zero_head=True)
    out, _ = net_forward(net, rng.normal(size=(6, 4)))
    assert not out.any()
    assert build_network((4,), 3, hidden=(5,), rng=rng).head.params["W"].any()


def test_train_config_validation():
    for bad in ({"epochs": 0}, {"batch_size": 0}, {"patience": 0}, {"optimizer": "rmsprop"}):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_sgd_optimizer_trains(rng):
    net = Sequential([], L.Dense(2, 1, rng=rng))
    x = rng.normal(size=(64, 2))
    y = x @ np.array([[1.0], [-2.0]])
    log = fit_regression(net, x, y, TrainConfig(epochs=50, optimizer="sgd", lr=0.05, batch_size=16))
    assert log.loss[-1] < 1e-4
