"""Multiclass (MLR) and proportional odds (POLR) logistic regression.

MLR uses the last okta as reference class, so each of the other eight
classes has an affine log-odds ``L_k(x) = b0_k + x @ b_k``.  POLR models the
cumulative probabilities as ``P(Y <= k | x) = expit(c_k - x @ slope)`` with
strictly increasing cut points ``c_1 < ... < c_8`` (``c_9`` is +inf), so a
positive slope shifts mass towards higher oktas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax

from .features import as_matrix
from .oktas import N_CATEGORIES

K = N_CATEGORIES


@dataclass
class FitConfig:
    l2: float = 0.0
    ftol: float = 1e-8
    gtol: float = 1e-6
    max_iter: int = 5000


def _check_training(X, y):
    X = as_matrix(X)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if y.shape != (X.shape[0],):
        raise ValueError("labels and features have different lengths")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features in training set")
    if np.any(y < 0) or np.any(y >= K):
        raise ValueError("labels must be okta indices 0..8")
    return X, y.astype(np.int64)


def _scaling(X):
    """Column centring/scaling used only to condition the optimizer."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def _minimize(fun, x0, config: FitConfig):
    history = []

    def callback(xk):
        history.append(float(fun(xk)[0]))

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={
            "ftol": config.ftol,
            "gtol": config.gtol,
            "maxiter": config.max_iter,
            "maxfun": 4 * config.max_iter,
        },
    )
    return res, [float(fun(x0)[0])] + history


# --------------------------------------------------------------------------
# MLR


@dataclass
class MlrModel:
    intercepts: np.ndarray  # (8,)
    weights: np.ndarray  # (8, M)
    feature_variant: str = "mlr6"
    history: list = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.intercepts.size + self.weights.size


def _mlr_unpack(theta, M):
    b0 = theta[: K - 1]
    B = theta[K - 1 :].reshape(K - 1, M)
    return b0, B


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _mlr_logits(b0, B, X):
    L = X @ B.T + b0
    return np.hstack([L, np.zeros((X.shape[0], 1))])


def mlr_nll(theta, X, y, l2: float = 0.0):
    """Mean negative log-likelihood of MLR and its gradient.

    ``theta`` stacks the 8 intercepts followed by the row-major (8, M)
    weight matrix. The optional ridge term ``l2 * sum(weights**2)`` leaves
    the intercepts unpenalized.
    """
    n, M = X.shape
    b0, B = _mlr_unpack(theta, M)
    logp = _log_softmax(_mlr_logits(b0, B, X))
    nll = -logp[np.arange(n), y].mean() + l2 * np.sum(B**2)
    resid = np.exp(logp)
    resid[np.arange(n), y] -= 1.0
    resid = resid[:, : K - 1] / n
    grad = np.concatenate([resid.sum(axis=0), (resid.T @ X + 2.0 * l2 * B).ravel()])
    return nll, grad


def mlr_hessian(theta, X, l2: float = 0.0):
    """Hessian of :func:`mlr_nll` in the same parameter layout."""
    n, M = X.shape
    b0, B = _mlr_unpack(theta, M)
    p = np.exp(_log_softmax(_mlr_logits(b0, B, X)))[:, : K - 1]
    Xt = np.hstack([np.ones((n, 1)), X])
    # per-sample softmax covariance, (n, 8, 8)
    A = -p[:, :, None] * p[:, None, :]
    A[:, np.arange(K - 1), np.arange(K - 1)] += p
    H = np.einsum("ikl,id,ie->kdle", A, Xt, Xt, optimize=True) / n
    H[:, 1:, :, 1:] += 2.0 * l2 * np.eye(K - 1)[:, None, :, None] * np.eye(M)[None, :, None, :]
    # reorder (class, [1, x]) blocks into [intercepts, row-major weights]
    P = (K - 1) * (M + 1)
    perm = np.concatenate([np.arange(K - 1) * (M + 1), (np.arange(K - 1)[:, None] * (M + 1) + 1 + np.arange(M)).ravel()])
    return H.reshape(P, P)[np.ix_(perm, perm)]


def _newton(fun, hess, x0, config: FitConfig):
    """Damped Newton descent with backtracking; records the NLL per iteration."""
    x = x0.copy()
    f, g = fun(x)
    history = [float(f)]
    for _ in range(config.max_iter):
        if np.max(np.abs(g)) < config.gtol:
            break
        H = hess(x)
        damp = 1e-10 * max(np.trace(H) / H.shape[0], 1.0)
        try:
            step = -np.linalg.solve(H + damp * np.eye(H.shape[0]), g)
        except np.linalg.LinAlgError:
            step = -g
        slope = g @ step
        if not slope < 0:
            step, slope = -g, -(g @ g)
        t = 1.0
        while True:
            f_new, g_new = fun(x + t * step)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if not f_new < f:
            break
        x = x + t * step
        improvement = f - f_new
        f, g = f_new, g_new
        history.append(float(f))
        if improvement < config.ftol:
            break
    return x, history


def mlr_predict(model: MlrModel, X) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return np.exp(log_softmax(_mlr_logits(model.intercepts, model.weights, X), axis=1))


def mlr_fit(X, y, config: FitConfig | None = None, feature_variant: str = "mlr6") -> MlrModel:
    config = config or FitConfig()
    X, y = _check_training(X, y)
    M = X.shape[1]
    if config.l2 > 0:
        # the ridge term is defined on raw-feature weights; no rescaling
        mu, sd = np.zeros(M), np.ones(M)
    else:
        mu, sd = _scaling(X)
    Z = (X - mu) / sd
    theta0 = np.zeros((K - 1) * (M + 1))
    theta, history = _newton(
        lambda t: mlr_nll(t, Z, y, config.l2), lambda t: mlr_hessian(t, Z, config.l2), theta0, config
    )
    b0, B = _mlr_unpack(theta, M)
    B = B / sd
    b0 = b0 - B @ mu
    return MlrModel(b0.copy(), B.copy(), feature_variant, history)


# --------------------------------------------------------------------------
# POLR


@dataclass
class PolrModel:
    cutpoints: np.ndarray  # (8,) finite, strictly increasing; the 9th is +inf
    slope: np.ndarray  # (M,), zero at excluded positions
    excluded: frozenset = frozenset()
    feature_variant: str = "full7"
    history: list = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return self.slope.size

    @property
    def n_params(self) -> int:
        # the ninth cut point is fixed at +inf; counted as in the model definition
        return K + self.slope.size


def _polr_cutpoints(theta):
    return theta[0] + np.concatenate([[0.0], np.cumsum(np.exp(theta[1 : K - 1]))])


def _interval_probs(eta_lo, eta_hi):
    """expit(eta_hi) - expit(eta_lo), accurate in both tails."""
    upper_tail = eta_lo > 0
    return np.where(
        upper_tail,
        expit(-eta_lo) - expit(-eta_hi),
        expit(eta_hi) - expit(eta_lo),
    )


def polr_cdf(cutpoints, slope, X) -> np.ndarray:
    """Cumulative probabilities P(Y <= k | x) for k = 1..9, shape (n, 9)."""
    eta = np.asarray(cutpoints)[None, :] - (X @ slope)[:, None]
    return np.hstack([expit(eta), np.ones((X.shape[0], 1))])


def _polr_pmf(cutpoints, slope, X):
    xb = X @ slope
    eta = np.asarray(cutpoints)[None, :] - xb[:, None]
    lo = np.hstack([np.full((X.shape[0], 1), -np.inf), eta])
    hi = np.hstack([eta, np.full((X.shape[0], 1), np.inf)])
    return _interval_probs(lo, hi)


def polr_nll(theta, X, y):
    """Mean negative log-likelihood of POLR and its gradient.

    ``theta = (c_1, log(c_2 - c_1), ..., log(c_8 - c_7), slope)``; the
    exponential increments keep the cut points strictly increasing.
    """
    n, M = X.shape
    if np.any(theta[1 : K - 1] > 700.0):
        # exp overflow: report an infinite loss so line searches back off
        return np.inf, np.zeros_like(theta)
    c = _polr_cutpoints(theta)
    slope = theta[K - 1 :]
    xb = X @ slope
    c_ext = np.concatenate([[-np.inf], c, [np.inf]])
    eta_lo = c_ext[y] - xb
    eta_hi = c_ext[y + 1] - xb
    p = np.maximum(_interval_probs(eta_lo, eta_hi), 1e-300)
    nll = -np.log(p).mean()

    def dens(eta):
        s = expit(eta)
        return np.where(np.isfinite(eta), s * (1.0 - s), 0.0)

    f_hi = dens(eta_hi) / p
    f_lo = dens(eta_lo) / p
    # gradient of -mean(log p) w.r.t. each finite cut point
    g_c = np.zeros(K - 1)
    has_hi = y < K - 1
    has_lo = y > 0
    np.add.at(g_c, y[has_hi], -f_hi[has_hi])
    np.add.at(g_c, y[has_lo] - 1, f_lo[has_lo])
    g_c /= n
    g_slope = (X * (f_hi - f_lo)[:, None]).sum(axis=0) / n
    # chain rule through c_k = c_1 + sum_{m<=k} exp(theta_m)
    tail = np.cumsum(g_c[::-1])[::-1]
    g_theta = np.concatenate([[g_c.sum()], tail[1:] * np.exp(theta[1 : K - 1]), g_slope])
    return nll, g_theta


def polr_predict(model: PolrModel, X) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return _polr_pmf(model.cutpoints, model.slope, X)


def _polr_start(y, M):
    counts = np.bincount(y, minlength=K) + 0.5
    cum = np.cumsum(counts)[:-1] / counts.sum()
    logits = np.log(cum / (1.0 - cum))
    return np.concatenate([[logits[0]], np.log(np.maximum(np.diff(logits), 1e-3)), np.zeros(M)])


def _polr_fit_plain(X, y, config):
    M = X.shape[1]
    if config.l2 > 0:
        mu, sd = np.zeros(M), np.ones(M)
    else:
        mu, sd = _scaling(X)
    X = (X - mu) / sd
    theta0 = _polr_start(y, M)
    if config.l2 > 0:
        def fun(t):
            f, g = polr_nll(t, X, y)
            g = g.copy()
            g[K - 1 :] += 2.0 * config.l2 * t[K - 1 :]
            return f + config.l2 * np.sum(t[K - 1 :] ** 2), g
    else:
        def fun(t):
            return polr_nll(t, X, y)
    res, history = _minimize(fun, theta0, config)
    slope = res.x[K - 1 :] / sd
    return _polr_cutpoints(res.x) + slope @ mu, slope, history


def polr_fit(
    X,
    y,
    config: FitConfig | None = None,
    nonneg_indices=(),
    feature_variant: str = "full7",
) -> PolrModel:
    """Maximum-likelihood POLR fit with sign-constrained covariates.

    Covariates listed in ``nonneg_indices`` must have a non-negative slope.
    While some constrained covariate has a negative one, the most negative
    is dropped and the model refitted.
    """
    config = config or FitConfig()
    X, y = _check_training(X, y)
    M = X.shape[1]
    nonneg = set(int(i) for i in nonneg_indices)
    if any(i < 0 or i >= M for i in nonneg):
        raise ValueError("constrained covariate index out of range")
    excluded: set[int] = set()
    while True:
        keep = [j for j in range(M) if j not in excluded]
        cut, sl, history = _polr_fit_plain(X[:, keep], y, config)
        slope = np.zeros(M)
        slope[keep] = sl
        offenders = [j for j in sorted(nonneg - excluded) if slope[j] < 0.0]
        if not offenders:
            break
        # one exclusion per round; ties go to the lowest index
        worst = min(offenders, key=lambda j: (slope[j], j))
        excluded.add(worst)
    return PolrModel(cut, slope, frozenset(excluded), feature_variant, history)
