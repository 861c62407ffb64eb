"""Independent reference implementations used by the tests."""

import itertools

import numpy as np

from oktacast.oktas import OKTA_VALUES
from oktacast.trees import LEAF, MIN_GAIN, RIDGE


def random_pmfs(rng, n, sparsity=0.3):
    """Random PMFs with some exact zeros."""
    p = rng.gamma(0.7, size=(n, 9))
    p[rng.random((n, 9)) < sparsity] = 0.0
    p[np.arange(n), rng.integers(0, 9, n)] += 0.05
    return p / p.sum(axis=1, keepdims=True)


def crps_enumeration(p, k):
    """E|X - x| - 0.5 E|X - X'| by explicit double loop over the 9 oktas."""
    x = OKTA_VALUES[k]
    e1 = sum(p[i] * abs(OKTA_VALUES[i] - x) for i in range(9))
    e2 = sum(p[i] * p[j] * abs(OKTA_VALUES[i] - OKTA_VALUES[j]) for i in range(9) for j in range(9))
    return e1 - 0.5 * e2


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def gini_objective(counts):
    """Sum over children of sum_k n_k**2 / n; larger is purer."""
    n = counts.sum()
    return (counts**2).sum() / n if n > 0 else 0.0


def newton_objective(g, h, ridge):
    return g.sum() ** 2 / (h.sum() + ridge)


def brute_force_split(X, score_fn, min_leaf=1):
    """Best (gain, feature, threshold) over every feature and midpoint.

    ``score_fn(mask)`` returns the node objective of the samples in
    ``mask``; the gain is left + right - parent. Ties keep the first
    candidate in (feature, threshold) order, matching a left-to-right scan.
    """
    n, F = X.shape
    parent = score_fn(np.ones(n, dtype=bool))
    best = (-np.inf, -1, np.nan)
    for f in range(F):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, f] <= thr
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            gain = score_fn(left) + score_fn(~left) - parent
            if gain > best[0]:
                best = (gain, f, thr)
    return best


def all_split_gains(X, score_fn):
    n, F = X.shape
    parent = score_fn(np.ones(n, dtype=bool))
    out = []
    for f in range(F):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            left = X[:, f] <= 0.5 * (lo + hi)
            out.append((score_fn(left) + score_fn(~left) - parent, f, 0.5 * (lo + hi)))
    return out


def pairs(seq):
    return list(itertools.combinations(seq, 2))


def route(tree, X):
    """Node index sets by walking the heap explicitly."""
    members = {0: np.arange(X.shape[0])}
    for j in range(tree.feature.size):
        if j not in members or tree.feature[j] < 0:
            continue
        idx = members[j]
        left = X[idx, tree.feature[j]] <= tree.threshold[j]
        members[2 * j + 1] = idx[left]
        members[2 * j + 2] = idx[~left]
    return members


def check_against_oracle(tree, X, score_fn_for):
    """Every node's split attains the exhaustive maximum gain."""
    for j, idx in route(tree, X).items():
        depth = int(np.floor(np.log2(j + 1)))
        if depth >= tree.max_depth or idx.size == 0:
            continue
        cands = all_split_gains(X[idx], score_fn_for(idx))
        best = max((c[0] for c in cands), default=-np.inf)
        if tree.feature[j] == LEAF:
            assert best <= MIN_GAIN * (1 + 1e-6) + 1e-12
            continue
        assert best > MIN_GAIN
        winners = [(f, t) for g, f, t in cands if g >= best - 1e-9 * max(1.0, abs(best))]
        assert (tree.feature[j], tree.threshold[j]) in winners
        if len(winners) == 1:
            assert abs(tree.gain[j] - best) <= 1e-9 * max(1.0, abs(best))


def gini_scores(y):
    def for_node(idx):
        yy = y[idx]
        return lambda mask: gini_objective(np.bincount(yy[mask], minlength=9).astype(float))

    return for_node


def newton_scores(g, h, ridge=RIDGE):
    def for_node(idx):
        gg, hh = g[idx], h[idx]
        return lambda mask: newton_objective(gg[mask], hh[mask], ridge)

    return for_node
