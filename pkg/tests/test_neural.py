import numpy as np
import pytest

from oktacast.neural import (
    MlpConfig,
    MlpModel,
    cross_entropy,
    init_params,
    loss_and_grad,
    mlp_forward,
    mlp_logits,
    mlp_train,
    standardization,
)
from oktacast.oktas import OKTA_VALUES, quantize_tcc
from oracles import fd_gradient, rel_error


def _random_model(rng, M=4):
    W, b = init_params(M, rng)
    b = [rng.normal(size=v.shape) for v in b]
    return MlpModel(W, b, rng.normal(size=M), rng.uniform(0.5, 2, M))


def test_logits_straight_line_oracle(rng):
    m = _random_model(rng)
    x = rng.normal(size=(5, 4))
    out = mlp_logits(m, x)
    for i in range(5):
        z = (x[i] - m.feature_mean) / m.feature_scale
        h1 = np.array([np.tanh(sum(z[a] * m.weights[0][a, j] for a in range(4)) + m.biases[0][j]) for j in range(10)])
        h2 = np.array([np.tanh(sum(h1[a] * m.weights[1][a, j] for a in range(10)) + m.biases[1][j]) for j in range(15)])
        lo = np.array([sum(h2[a] * m.weights[2][a, j] for a in range(15)) + m.biases[2][j] for j in range(9)])
        np.testing.assert_allclose(out[i], lo, rtol=0, atol=1e-12)


def test_forward_valid_and_pure(rng):
    m = _random_model(rng)
    x = rng.normal(size=(1, 4)) * 100
    p1, p2 = mlp_forward(m, x), mlp_forward(m, x)
    np.testing.assert_array_equal(p1, p2)
    assert np.all(p1 >= 0) and abs(p1.sum() - 1) < 1e-12
    assert m.layer_sizes == (4, 10, 15, 9)
    with pytest.raises(ValueError):
        mlp_forward(m, np.zeros((1, 3)))


def test_gradient_every_tensor(rng):
    for _ in range(5):
        n, M = rng.integers(3, 20), rng.integers(1, 8)
        W, b = init_params(M, rng)
        b = [rng.normal(size=v.shape) * 0.3 for v in b]
        Z = rng.normal(size=(n, M))
        y = rng.integers(0, 9, n)
        l2 = rng.uniform(0, 1)
        _, gW, gb = loss_and_grad(W, b, Z, y, l2)
        for layer in range(3):
            for params, grads in ((W, gW), (b, gb)):
                base = params[layer]

                def f(flat):
                    params[layer] = flat.reshape(base.shape)
                    out = loss_and_grad(W, b, Z, y, l2)[0]
                    params[layer] = base
                    return out

                fd = fd_gradient(f, base.ravel().copy())
                assert rel_error(grads[layer], fd) < 1e-5


def test_standardization_zero_variance():
    X = np.c_[np.ones(10), np.arange(10.0)]
    mean, scale = standardization(X)
    assert scale[0] == 1.0 and scale[1] > 0


def test_noise_labels_reach_marginal_entropy(rng):
    n = 3000
    X = rng.normal(size=(n, 5))
    probs = np.array([0.2, 0.05, 0.05, 0.1, 0.1, 0.1, 0.1, 0.1, 0.2])
    y = rng.choice(9, size=n, p=probs)
    m = mlp_train(X, y, MlpConfig(seed=3))
    val = m.history["best_val"]
    # entropy of the label marginal on the validation part
    rng2 = np.random.default_rng(3)
    from oktacast.neural import train_val_split

    _, vi = train_val_split(n, 0.15, rng2)
    freq = np.bincount(y[vi], minlength=9) / vi.size
    H = -np.sum(freq[freq > 0] * np.log(freq[freq > 0]))
    assert abs(val - H) / H < 0.05


def test_separable_labels_learned(rng):
    n = 1800
    hres = rng.choice(OKTA_VALUES, size=n) + rng.uniform(-0.004, 0.004, n)
    hres = np.clip(hres, 0, 1)
    y = quantize_tcc(hres)
    X = np.c_[hres, rng.random((n, 6))]
    m = mlp_train(X, y, MlpConfig(seed=1, max_epochs=3000, patience=50))
    acc = np.mean(np.argmax(mlp_forward(m, X), axis=1) == y)
    assert acc > 0.95


def test_patience_zero_returns_initial_snapshot(rng):
    X = rng.normal(size=(200, 3))
    y = rng.integers(0, 9, 200)
    cfg = MlpConfig(patience=0, learning_rate=50.0, seed=5)
    m = mlp_train(X, y, cfg)
    assert m.history["epochs"] == 1
    # the initial snapshot has zero biases by construction
    assert all(np.all(b == 0) for b in m.biases)
    assert m.history["best_val"] == m.history["val"][0]


def test_validation_never_worse_than_init(rng):
    X = rng.normal(size=(300, 4))
    y = (X[:, 0] > 0).astype(int) * 8
    m = mlp_train(X, y, MlpConfig(seed=2, max_epochs=200))
    assert m.history["best_val"] <= m.history["val"][0]


def test_huge_penalty_flattens(rng):
    X = rng.normal(size=(400, 3))
    y = np.where(X[:, 0] > 0, 8, 0)
    m = mlp_train(X, y, MlpConfig(seed=0, l2_factor=1e6, max_epochs=400))
    assert max(np.abs(W).max() for W in m.weights) < 1e-2
    p = mlp_forward(m, rng.normal(size=(50, 3)) * 3)
    assert np.abs(p - p.mean(axis=0)).max() < 1e-3


def test_reproducible(rng):
    X = rng.normal(size=(300, 4))
    y = rng.integers(0, 9, 300)
    a = mlp_train(X, y, MlpConfig(seed=9, max_epochs=50))
    b = mlp_train(X, y, MlpConfig(seed=9, max_epochs=50))
    for u, v in zip(a.weights + a.biases, b.weights + b.biases):
        np.testing.assert_array_equal(u, v)


def test_split_errors():
    with pytest.raises(ValueError):
        mlp_train(np.zeros((3, 2)), np.zeros(3, int))


def test_cross_entropy_uniform():
    W = [np.zeros((2, 10)), np.zeros((10, 15)), np.zeros((15, 9))]
    b = [np.zeros(10), np.zeros(15), np.zeros(9)]
    assert cross_entropy(W, b, np.ones((4, 2)), np.arange(4)) == pytest.approx(np.log(9))
