"""CART trees, random forests and second-order gradient boosting.

Trees are stored in heap layout: node ``j`` has children ``2j+1`` and
``2j+2``, so a tree of depth ``D`` occupies ``2**(D+1) - 1`` slots.  Split
search is exact: candidate thresholds are the midpoints between consecutive
distinct feature values inside a node, and a sample goes left when its value
is ``<=`` the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.special import log_softmax

from .features import as_matrix
from .oktas import N_CATEGORIES

K = N_CATEGORIES
LEAF = -1
UNUSED = -2
MIN_GAIN = 1e-10
RIDGE = 1e-6


@njit(cache=True, inline="always")
def _scan_gini(xs, od, loc_of, w, y, f, first, feat_mask, cnt, tot, tot_sq, min_leaf,
               run, run_c, run_sl, run_sr, prev, has_prev, best_gain, best_feat, best_thr):
    for t in range(xs.shape[0]):
        i = od[t]
        loc = loc_of[i]
        if loc < 0:
            continue
        j = first + loc
        if not feat_mask[j, f]:
            continue
        v = xs[t]
        if has_prev[loc] and v > prev[loc]:
            cl = run_c[loc]
            cr = cnt[j] - cl
            if cl >= min_leaf and cr >= min_leaf:
                gain = run_sl[loc] / cl + run_sr[loc] / cr - tot_sq[j] / cnt[j]
                if gain > best_gain[loc]:
                    best_gain[loc] = gain
                    best_feat[loc] = f
                    thr = 0.5 * (prev[loc] + v)
                    if thr >= v:
                        thr = prev[loc]
                    best_thr[loc] = thr
        wi = w[i]
        c = y[i]
        lc = run[loc, c]
        rc = tot[j, c] - lc
        run_sl[loc] += 2.0 * wi * lc + wi * wi
        run_sr[loc] += -2.0 * wi * rc + wi * wi
        run[loc, c] = lc + wi
        run_c[loc] += wi
        prev[loc] = v
        has_prev[loc] = True


@njit(cache=True, inline="always")
def _scan_newton(xs, od, loc_of, w, g, h, f, first, feat_mask, cnt, tot, parent, min_leaf,
                 ridge, run, run_c, prev, has_prev, best_gain, best_feat, best_thr):
    for t in range(xs.shape[0]):
        i = od[t]
        loc = loc_of[i]
        if loc < 0:
            continue
        j = first + loc
        if not feat_mask[j, f]:
            continue
        v = xs[t]
        if has_prev[loc] and v > prev[loc]:
            cl = run_c[loc]
            cr = cnt[j] - cl
            if cl >= min_leaf and cr >= min_leaf:
                gl = run[loc, 0]
                hl = run[loc, 1]
                gr = tot[j, 0] - gl
                hr = tot[j, 1] - hl
                gain = gl * gl / (hl + ridge) + gr * gr / (hr + ridge) - parent[loc]
                if gain > best_gain[loc]:
                    best_gain[loc] = gain
                    best_feat[loc] = f
                    thr = 0.5 * (prev[loc] + v)
                    if thr >= v:
                        thr = prev[loc]
                    best_thr[loc] = thr
        wi = w[i]
        run[loc, 0] += wi * g[i]
        run[loc, 1] += wi * h[i]
        run_c[loc] += wi
        prev[loc] = v
        has_prev[loc] = True


@njit(cache=True)
def _grow_kernel(Xs, order, X, w, y, g, h, mode, max_depth, min_leaf, ridge, min_gain, feat_mask):
    """Level-wise exact split search.

    ``Xs[f]`` holds the values of feature ``f`` in sorted order and
    ``order[f]`` the matching row ids.  Mode 0 scores splits by the Gini
    decrease ``sum(L**2)/nL + sum(R**2)/nR - sum(T**2)/n`` over weighted
    class counts; mode 1 by the second-order gain
    ``GL**2/(HL+r) + GR**2/(HR+r) - G**2/(H+r)``.
    """
    F, n = Xs.shape
    n_heap = 2 ** (max_depth + 1) - 1
    n_cls = 1
    if mode == 0:
        for i in range(n):
            if y[i] + 1 > n_cls:
                n_cls = y[i] + 1
    feature = np.full(n_heap, UNUSED, dtype=np.int64)
    threshold = np.zeros(n_heap)
    gain_out = np.zeros(n_heap)
    cnt = np.zeros(n_heap)
    # per node: class counts (mode 0) or (G, H) (mode 1)
    n_stat = n_cls if mode == 0 else 2
    tot = np.zeros((n_heap, n_stat))
    tot_sq = np.zeros(n_heap)
    is_open = np.zeros(n_heap, dtype=np.bool_)

    node = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if w[i] > 0:
            node[i] = 0
            cnt[0] += w[i]
            if mode == 0:
                tot[0, y[i]] += w[i]
            else:
                tot[0, 0] += w[i] * g[i]
                tot[0, 1] += w[i] * h[i]
    if cnt[0] > 0:
        is_open[0] = True
        feature[0] = LEAF

    loc_of = np.full(n, -1, dtype=np.int64)
    for depth in range(max_depth):
        first = 2**depth - 1
        width = 2**depth
        any_open = False
        for loc in range(width):
            j = first + loc
            if is_open[j]:
                any_open = True
                if mode == 0:
                    s = 0.0
                    for k in range(n_stat):
                        s += tot[j, k] * tot[j, k]
                    tot_sq[j] = s
        if not any_open:
            break
        for i in range(n):
            j = node[i]
            if j >= first and j < first + width and is_open[j]:
                loc_of[i] = j - first
            else:
                loc_of[i] = -1
        parent = np.zeros(width)
        if mode == 1:
            for loc in range(width):
                j = first + loc
                parent[loc] = tot[j, 0] * tot[j, 0] / (tot[j, 1] + ridge)
        best_gain = np.full(width, min_gain)
        best_feat = np.full(width, -1, dtype=np.int64)
        best_thr = np.zeros(width)
        run = np.zeros((width, n_stat))
        run_c = np.zeros(width)
        run_sl = np.zeros(width)
        run_sr = np.zeros(width)
        prev = np.zeros(width)
        has_prev = np.zeros(width, dtype=np.bool_)
        for f in range(F):
            used = False
            for loc in range(width):
                if is_open[first + loc] and feat_mask[first + loc, f]:
                    used = True
            if not used:
                continue
            for loc in range(width):
                for k in range(n_stat):
                    run[loc, k] = 0.0
                run_c[loc] = 0.0
                run_sl[loc] = 0.0
                run_sr[loc] = tot_sq[first + loc]
                has_prev[loc] = False
            if mode == 0:
                _scan_gini(
                    Xs[f], order[f], loc_of, w, y, f, first, feat_mask, cnt, tot, tot_sq,
                    min_leaf, run, run_c, run_sl, run_sr, prev, has_prev, best_gain, best_feat,
                    best_thr,
                )
            else:
                _scan_newton(
                    Xs[f], order[f], loc_of, w, g, h, f, first, feat_mask, cnt, tot, parent,
                    min_leaf, ridge, run, run_c, prev, has_prev, best_gain, best_feat, best_thr,
                )
        for loc in range(width):
            j = first + loc
            if is_open[j]:
                is_open[j] = False
                if best_feat[loc] >= 0:
                    feature[j] = best_feat[loc]
                    threshold[j] = best_thr[loc]
                    gain_out[j] = best_gain[loc]
                    is_open[2 * j + 1] = True
                    is_open[2 * j + 2] = True
                    feature[2 * j + 1] = LEAF
                    feature[2 * j + 2] = LEAF
        for i in range(n):
            j = node[i]
            if j < first or j >= first + width or feature[j] < 0:
                continue
            if X[i, feature[j]] <= threshold[j]:
                c = 2 * j + 1
            else:
                c = 2 * j + 2
            node[i] = c
            cnt[c] += w[i]
            if mode == 0:
                tot[c, y[i]] += w[i]
            else:
                tot[c, 0] += w[i] * g[i]
                tot[c, 1] += w[i] * h[i]
    return feature, threshold, gain_out, tot, cnt, node


@njit(cache=True)
def _grow_many(Xs, order, X, W, y, G, Hh, mode, max_depth, min_leaf, ridge, min_gain, masks):
    """Grow one tree per row of ``W`` (and of ``G``/``Hh`` in mode 1)."""
    T = W.shape[0]
    n = X.shape[0]
    n_heap = 2 ** (max_depth + 1) - 1
    n_cls = 1
    if mode == 0:
        for i in range(n):
            if y[i] + 1 > n_cls:
                n_cls = y[i] + 1
    n_stat = n_cls if mode == 0 else 2
    feature = np.empty((T, n_heap), dtype=np.int64)
    threshold = np.empty((T, n_heap))
    gain = np.empty((T, n_heap))
    tot = np.empty((T, n_heap, n_stat))
    cnt = np.empty((T, n_heap))
    node = np.empty((T, n), dtype=np.int64)
    for t in range(T):
        g = G[t] if mode == 1 else G[0]
        h = Hh[t] if mode == 1 else Hh[0]
        f, th, ga, to, c, nd = _grow_kernel(
            Xs, order, X, W[t], y, g, h, mode, max_depth, min_leaf, ridge, min_gain, masks[t]
        )
        feature[t] = f
        threshold[t] = th
        gain[t] = ga
        tot[t] = to
        cnt[t] = c
        node[t] = nd
    return feature, threshold, gain, tot, cnt, node


@njit(cache=True)
def _predict_each(X, feature, threshold, value):
    """First leaf value of every tree in a stack, shape (n, T)."""
    n = X.shape[0]
    T = feature.shape[0]
    out = np.zeros((n, T))
    for t in range(T):
        for i in range(n):
            j = 0
            while feature[t, j] >= 0:
                if X[i, feature[t, j]] <= threshold[t, j]:
                    j = 2 * j + 1
                else:
                    j = 2 * j + 2
            out[i, t] = value[t, j]
    return out


@njit(cache=True)
def _predict_sum(X, feature, threshold, value):
    """Sum of leaf values over a stack of trees, shape (n, Kv)."""
    n = X.shape[0]
    T, H = feature.shape
    Kv = value.shape[2]
    out = np.zeros((n, Kv))
    for t in range(T):
        for i in range(n):
            j = 0
            while feature[t, j] >= 0:
                if X[i, feature[t, j]] <= threshold[t, j]:
                    j = 2 * j + 1
                else:
                    j = 2 * j + 2
            for k in range(Kv):
                out[i, k] += value[t, j, k]
    return out


@dataclass
class CartTree:
    """One grown tree in heap layout."""

    feature: np.ndarray  # (H,) split feature, LEAF for leaves, UNUSED for empty slots
    threshold: np.ndarray  # (H,)
    value: np.ndarray  # (H, Kv) leaf payload
    max_depth: int
    gain: Optional[np.ndarray] = field(default=None, repr=False)
    weight: Optional[np.ndarray] = field(default=None, repr=False)
    train_nodes: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def predict(self, X) -> np.ndarray:
        X = as_matrix(X)
        return _predict_sum(X, self.feature[None, :], self.threshold[None, :], self.value[None])

    def depth(self) -> int:
        used = np.nonzero(self.feature != UNUSED)[0]
        if used.size == 0:
            return 0
        return int(np.floor(np.log2(used.max() + 1)))

    def leaves(self) -> np.ndarray:
        return np.nonzero(self.feature == LEAF)[0]


def feature_order(X) -> np.ndarray:
    """Per-feature stable sort order, shape (F, n); reusable across trees."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def sorted_values(X, order) -> np.ndarray:
    return np.ascontiguousarray(np.take_along_axis(X, order.T, axis=0).T)


def _feature_masks(n_heap, F, mtry, rng, n_trees=None):
    """Per-node candidate-feature masks, shape (n_heap, F) or (n_trees, n_heap, F)."""
    shape = (n_heap, F) if n_trees is None else (n_trees, n_heap, F)
    if mtry is None or mtry >= F:
        return np.ones(shape, dtype=np.bool_)
    if mtry < 1:
        raise ValueError("mtry must be at least 1")
    if rng is None:
        raise ValueError("feature subsampling needs a random generator")
    picks = np.argsort(rng.random(shape), axis=-1)[..., :mtry]
    mask = np.zeros(shape, dtype=np.bool_)
    np.put_along_axis(mask, picks, True, axis=-1)
    return mask


def cart_grow(
    X,
    targets,
    mode: str = "gini",
    max_depth: int = 3,
    mtry: Optional[int] = None,
    min_leaf: float = 1,
    rng: Optional[np.random.Generator] = None,
    weights=None,
    order=None,
    ridge: float = RIDGE,
    n_classes: int = K,
    sorted_x=None,
) -> CartTree:
    """Grow one CART tree greedily, level by level.

    Parameters
    ----------
    X : array (n, F)
    targets : class labels (``mode="gini"``) or a ``(grad, hess)`` pair
        (``mode="newton"``).
    mode : {"gini", "newton"}
        Gini impurity with class-frequency leaves, or the second-order
        boosting gain with leaf value ``-sum(g) / (sum(h) + ridge)``.
    mtry : features sampled without replacement at each node (all if None).
    weights : per-row multiplicities, e.g. bootstrap counts.
    order : precomputed :func:`feature_order` of ``X``.
    """
    X = np.ascontiguousarray(as_matrix(X))
    n, F = X.shape
    if n == 0:
        raise ValueError("cannot grow a tree on an empty training set")
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    empty = np.zeros(0)
    if mode == "gini":
        y = np.asarray(targets, dtype=np.int64)
        g = h = empty
        code = 0
    elif mode == "newton":
        g = np.asarray(targets[0], dtype=float)
        h = np.asarray(targets[1], dtype=float)
        y = np.zeros(0, dtype=np.int64)
        code = 1
    else:
        raise ValueError(f"unknown tree mode {mode!r}")
    if order is None:
        order = feature_order(X)
    Xs = sorted_values(X, order) if sorted_x is None else sorted_x
    n_heap = 2 ** (max_depth + 1) - 1
    mask = _feature_masks(n_heap, F, mtry, rng)
    feature, threshold, gain, tot, cnt, node = _grow_kernel(
        Xs, order, X, w, y, g, h, code, max_depth, float(min_leaf), ridge, MIN_GAIN, mask
    )
    used = feature != UNUSED
    if code == 0:
        counts = np.zeros((n_heap, n_classes))
        counts[:, : tot.shape[1]] = tot
        value = np.where(
            used[:, None] & (cnt[:, None] > 0), counts / np.maximum(cnt, 1e-300)[:, None], 0.0
        )
    else:
        value = np.where(used, -tot[:, 0] / (tot[:, 1] + ridge), 0.0)[:, None]
    return CartTree(feature, threshold, value, max_depth, gain, cnt, node)


def _stack(trees):
    H = max(t.feature.size for t in trees)
    Kv = trees[0].value.shape[1]
    feature = np.full((len(trees), H), UNUSED, dtype=np.int64)
    threshold = np.zeros((len(trees), H))
    value = np.zeros((len(trees), H, Kv))
    for i, t in enumerate(trees):
        h = t.feature.size
        feature[i, :h] = t.feature
        threshold[i, :h] = t.threshold
        value[i, :h] = t.value
    return feature, threshold, value


# --------------------------------------------------------------------------
# Random forest


@dataclass
class RfModel:
    trees: list
    depth: int
    mtry: int
    seed: Optional[int] = None
    n_features: int = 0
    _stacked: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def stacked(self):
        if self._stacked is None:
            self._stacked = _stack(self.trees)
        return self._stacked


def rf_fit(
    X,
    y,
    n_trees: int = 1000,
    depth: int = 3,
    mtry: int = 3,
    seed=None,
    min_leaf: float = 1,
) -> RfModel:
    """Random forest of Gini trees on bootstrap resamples.

    Every tree sees a with-replacement resample of the training rows of the
    same size and samples ``mtry`` candidate features at each node.
    """
    X = np.ascontiguousarray(as_matrix(X))
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if np.any(y < 0) or np.any(y >= K):
        raise ValueError("labels must be okta indices 0..8")
    rng = np.random.default_rng(seed)
    order = feature_order(X)
    Xs = sorted_values(X, order)
    boot = rng.integers(0, n, size=(n_trees, n))
    W = np.bincount(
        (boot + n * np.arange(n_trees)[:, None]).ravel(), minlength=n_trees * n
    ).reshape(n_trees, n).astype(float)
    n_heap = 2 ** (depth + 1) - 1
    masks = _feature_masks(n_heap, X.shape[1], mtry, rng, n_trees)
    empty = np.zeros((1, 0))
    feature, threshold, gain, tot, cnt, node = _grow_many(
        Xs, order, X, W, y, empty, empty, 0, depth, float(min_leaf), RIDGE, MIN_GAIN, masks
    )
    used = feature != UNUSED
    counts = np.zeros((n_trees, n_heap, K))
    counts[..., : tot.shape[2]] = tot
    value = np.where(
        (used & (cnt > 0))[..., None], counts / np.maximum(cnt, 1e-300)[..., None], 0.0
    )
    trees = [
        CartTree(feature[t], threshold[t], value[t], depth, gain[t], cnt[t], node[t])
        for t in range(n_trees)
    ]
    model = RfModel(trees, depth, mtry, seed if isinstance(seed, int) else None, X.shape[1])
    model._stacked = (feature, threshold, value)
    return model


def rf_predict(model: RfModel, X) -> np.ndarray:
    X = np.ascontiguousarray(as_matrix(X))
    if model.n_features and X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    feature, threshold, value = model.stacked()
    out = _predict_sum(X, feature, threshold, value) / len(model.trees)
    return out / out.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# Gradient boosting


@dataclass
class GbmModel:
    """Per-class boosted regression trees with a softmax link.

    ``trees[m][c]`` is the tree added for class ``c`` in round ``m``.
    """

    base_scores: np.ndarray
    trees: list
    learning_rate: float = 0.1
    depth: int = 1
    n_features: int = 0
    val_history: list = field(default_factory=list, repr=False)
    train_history: list = field(default_factory=list, repr=False)
    rounds_run: int = 0
    _stacked: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def stacked(self):
        if self._stacked is None:
            self._stacked = [
                _stack([rnd[c] for rnd in self.trees]) if self.trees else None
                for c in range(K)
            ]
        return self._stacked


def _softmax_ce(F, y):
    Fs = F - F.max(axis=1, keepdims=True)
    E = np.exp(Fs)
    S = E.sum(axis=1)
    rows = np.arange(F.shape[0])
    return float(np.mean(np.log(S) - Fs[rows, y])), E / S[:, None]


def gbm_latents(model: GbmModel, X) -> np.ndarray:
    X = np.ascontiguousarray(as_matrix(X))
    if model.n_features and X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    Z = np.tile(model.base_scores, (X.shape[0], 1))
    if model.trees:
        for c, (feature, threshold, value) in enumerate(model.stacked()):
            Z[:, c] += model.learning_rate * _predict_sum(X, feature, threshold, value)[:, 0]
    return Z


def gbm_predict(model: GbmModel, X) -> np.ndarray:
    return np.exp(log_softmax(gbm_latents(model, X), axis=1))


def base_scores(y, floor: float = 1e-9) -> np.ndarray:
    freq = np.bincount(np.asarray(y, dtype=np.int64), minlength=K) / len(y)
    return np.log(np.maximum(freq, floor))


def gbm_fit(
    X,
    y,
    X_val=None,
    y_val=None,
    depth: int = 1,
    learning_rate: float = 0.1,
    early_stop_rounds: Optional[int] = 25,
    max_rounds: int = 1000,
    ridge: float = RIDGE,
    min_leaf: float = 1,
) -> GbmModel:
    """Boost ``K`` regression trees per round on softmax gradients.

    With validation data, the validation LogS is tracked each round and
    fitting stops once it has not improved for ``early_stop_rounds``
    rounds; the returned model keeps the rounds up to the best one.
    Without validation data exactly ``max_rounds`` rounds are fitted.
    """
    X = np.ascontiguousarray(as_matrix(X))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    has_val = X_val is not None
    if has_val:
        X_val = np.ascontiguousarray(as_matrix(X_val))
        y_val = np.asarray(y_val, dtype=np.int64)
        if X_val.shape[0] == 0:
            raise ValueError("empty validation set")
    base = base_scores(y)
    order = feature_order(X)
    Xs = sorted_values(X, order)
    Z = np.tile(base, (X.shape[0], 1))
    Zv = np.tile(base, (X_val.shape[0], 1)) if has_val else None
    onehot = np.eye(K)[y]
    W = np.ones((K, X.shape[0]))
    masks = np.ones((K, 2 ** (depth + 1) - 1, X.shape[1]), dtype=np.bool_)
    empty_y = np.zeros(0, dtype=np.int64)
    trees: list = []
    train_hist, val_hist = [], []
    best, best_m, since = np.inf, 0, 0
    m = 0
    _, P = _softmax_ce(Z, y)
    for m in range(1, max_rounds + 1):
        G = P - onehot
        Hs = P * (1.0 - P)
        feature, threshold, gain, tot, cnt, node = _grow_many(
            Xs, order, X, W, empty_y, np.ascontiguousarray(G.T), np.ascontiguousarray(Hs.T),
            1, depth, float(min_leaf), ridge, MIN_GAIN, masks,
        )
        value = np.where(feature != UNUSED, -tot[..., 0] / (tot[..., 1] + ridge), 0.0)
        Z += learning_rate * np.take_along_axis(value, node, axis=1).T
        if has_val:
            Zv += learning_rate * _predict_each(X_val, feature, threshold, value)
        trees.append([
            CartTree(feature[c], threshold[c], value[c][:, None], depth, gain[c], cnt[c], node[c])
            for c in range(K)
        ])
        loss, P = _softmax_ce(Z, y)
        train_hist.append(loss)
        if not has_val:
            continue
        v = _softmax_ce(Zv, y_val)[0]
        val_hist.append(v)
        if v < best:
            best, best_m, since = v, m, 0
        else:
            since += 1
            if early_stop_rounds is not None and since >= early_stop_rounds:
                break
    keep = best_m if has_val else len(trees)
    return GbmModel(
        base, trees[:keep], learning_rate, depth, X.shape[1], val_hist, train_hist, m
    )
