"""Two-hidden-layer tanh perceptron with a softmax output over the oktas."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import log_softmax

from .features import as_matrix
from .oktas import N_CATEGORIES

HIDDEN = (10, 15)


@dataclass
class MlpConfig:
    l2_factor: float = 0.1
    val_fraction: float = 0.15
    patience: int = 25
    max_epochs: int = 2000
    learning_rate: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    seed: Optional[int] = 0


@dataclass
class MlpModel:
    weights: list  # [(M, 10), (10, 15), (15, 9)]
    biases: list  # [(10,), (15,), (9,)]
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    l2_factor: float = 0.1
    rng_seed: Optional[int] = None
    feature_variant: str = "full7"
    history: dict = field(default_factory=dict, repr=False)

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]


def standardization(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def init_params(n_features: int, rng: np.random.Generator):
    sizes = (n_features,) + HIDDEN + (N_CATEGORIES,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, Z):
    acts = [Z]
    a = Z
    for W, b in zip(weights[:-1], biases[:-1]):
        a = np.tanh(a @ W + b)
        acts.append(a)
    logits = a @ weights[-1] + biases[-1]
    return logits, acts


def mlp_logits(model: MlpModel, X) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    Z = (X - model.feature_mean) / model.feature_scale
    return _forward(model.weights, model.biases, Z)[0]


def mlp_forward(model: MlpModel, X) -> np.ndarray:
    """Predictive PMFs, shape (n, 9)."""
    return np.exp(log_softmax(mlp_logits(model, X), axis=1))


def cross_entropy(weights, biases, Z, y) -> float:
    logits, _ = _forward(weights, biases, Z)
    logp = log_softmax(logits, axis=1)
    return float(-logp[np.arange(Z.shape[0]), y].mean())


def n_weights(weights) -> int:
    return int(sum(W.size for W in weights))


def penalty(weights, l2_factor: float) -> float:
    """``l2_factor`` times the mean squared weight over all layers."""
    return l2_factor * sum(float(np.sum(W**2)) for W in weights) / n_weights(weights)


def loss_and_grad(weights, biases, Z, y, l2_factor: float):
    """Mean cross-entropy plus the weight penalty, and its gradient.

    The penalty is ``l2_factor * sum(W**2) / n_weights``: the sum of squared
    weights scaled by their count, so the default factor of 0.1 does not
    depend on the input dimension. ``Z`` are standardized inputs. Biases are
    not penalized.
    """
    n = Z.shape[0]
    logits, acts = _forward(weights, biases, Z)
    logp = log_softmax(logits, axis=1)
    loss = -logp[np.arange(n), y].mean() + penalty(weights, l2_factor)
    coef = 2.0 * l2_factor / n_weights(weights)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gW = [None] * len(weights)
    gb = [None] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        gW[layer] = acts[layer].T @ delta + coef * weights[layer]
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (1.0 - acts[layer] ** 2)
    return float(loss), gW, gb


def train_val_split(n: int, val_fraction: float, rng: np.random.Generator):
    n_val = int(round(val_fraction * n))
    if n_val < 1 or n_val >= n:
        raise ValueError("training set too small for a non-empty train/validation split")
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def mlp_train(X, y, config: MlpConfig | None = None, feature_variant: str = "full7") -> MlpModel:
    """Fit the network with early stopping on a random validation split.

    Full-batch Adam steps; one step is one epoch. The validation
    cross-entropy is recorded after every epoch and the best snapshot
    (including the initial one) is returned. Training stops after
    ``patience`` consecutive epochs without improvement, or at
    ``max_epochs``. A non-finite loss halves the step size and retries the
    epoch.
    """
    config = config or MlpConfig()
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("labels and features have different lengths")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features in training set")
    rng = np.random.default_rng(config.seed)
    fit_idx, val_idx = train_val_split(X.shape[0], config.val_fraction, rng)
    mean, scale = standardization(X[fit_idx])
    Z = (X - mean) / scale
    Zf, yf, Zv, yv = Z[fit_idx], y[fit_idx], Z[val_idx], y[val_idx]

    weights, biases = init_params(X.shape[1], rng)
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    lr = config.learning_rate
    b1, b2, eps = config.beta1, config.beta2, 1e-8

    best_val = cross_entropy(weights, biases, Zv, yv)
    best = [p.copy() for p in params]
    val_hist, train_hist = [best_val], []
    since = 0
    step = 0
    n_layers = len(weights)
    epoch = 0
    while epoch < config.max_epochs:
        loss, gW, gb = loss_and_grad(params[:n_layers], params[n_layers:], Zf, yf, config.l2_factor)
        grads = gW + gb
        t = step + 1
        trial, m_new, v_new = [], [], []
        for p, g, mi, vi in zip(params, grads, m, v):
            mi = b1 * mi + (1 - b1) * g
            vi = b2 * vi + (1 - b2) * g * g
            mhat = mi / (1 - b1**t)
            vhat = vi / (1 - b2**t)
            trial.append(p - lr * mhat / (np.sqrt(vhat) + eps))
            m_new.append(mi)
            v_new.append(vi)
        val = cross_entropy(trial[:n_layers], trial[n_layers:], Zv, yv)
        if not (np.isfinite(loss) and np.isfinite(val)):
            lr *= 0.5
            if lr < 1e-12:
                raise FloatingPointError("MLP training diverged")
            continue
        params, m, v, step = trial, m_new, v_new, t
        epoch += 1
        train_hist.append(loss)
        val_hist.append(val)
        if val < best_val:
            best_val = val
            best = [p.copy() for p in params]
            since = 0
        else:
            since += 1
            if since >= max(config.patience, 1):
                break
    return MlpModel(
        best[:n_layers],
        best[n_layers:],
        mean,
        scale,
        config.l2_factor,
        config.seed,
        feature_variant,
        {"val": val_hist, "train": train_hist, "best_val": best_val, "epochs": epoch},
    )
