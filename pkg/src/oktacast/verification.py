"""Scoring rules, calibration diagnostics and significance testing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .oktas import N_CATEGORIES, OKTA_VALUES, validate_pmf

# pairwise |y_k - y_l| on the okta scale
_ABS_DIFF = np.abs(OKTA_VALUES[:, None] - OKTA_VALUES[None, :])


class ZeroProbabilityError(ValueError):
    """LogS requested for an observation the forecast rules out."""


class DegenerateSeriesError(ValueError):
    pass


class IncomparableSeriesError(ValueError):
    pass


def _obs_index(obs):
    if hasattr(obs, "okta_index"):
        obs = obs.okta_index
    k = np.asarray(obs)
    if np.any(k < 0) or np.any(k >= N_CATEGORIES):
        raise ValueError("observation must be an okta index 0..8")
    return k.astype(np.int64)


def crps_discrete(pmf, obs):
    """Discrete CRPS on the okta scale.

    Parameters
    ----------
    pmf : array_like, shape (9,) or (n, 9)
    obs : int or array of okta indices

    Returns
    -------
    float or ndarray of shape (n,)
    """
    p = validate_pmf(pmf)
    k = _obs_index(obs)
    x = OKTA_VALUES[k]
    term1 = np.sum(p * np.abs(OKTA_VALUES - np.expand_dims(x, -1)), axis=-1)
    # sum over k > l of p_k p_l |y_k - y_l| is half the full double sum
    term2 = 0.5 * np.einsum("...k,kl,...l->...", p, _ABS_DIFF, p)
    out = np.maximum(term1 - term2, 0.0)
    return float(out) if out.ndim == 0 else out


def log_score(pmf, obs):
    """Negative log of the probability assigned to the observed okta."""
    p = validate_pmf(pmf)
    k = _obs_index(obs)
    p_obs = np.take_along_axis(p, np.expand_dims(k, -1), axis=-1)[..., 0]
    if np.any(p_obs <= 0.0):
        raise ZeroProbabilityError(
            "zero predicted probability at the observation; floor the PMF first"
        )
    out = -np.log(p_obs)
    return float(out) if out.ndim == 0 else out


def pmin_for_training_length(T):
    """Probability giving a 1% chance of at least one occurrence in T days."""
    T = np.asarray(T, dtype=float)
    if np.any(~(T >= 1)):
        raise ValueError("training length must be at least one day")
    out = -np.expm1(np.log(0.99) / T)
    return float(out) if out.ndim == 0 else out


def floor_pmf(pmf, T) -> np.ndarray:
    """Raise every entry to at least p_min and renormalize.

    Floored entries are set exactly to p_min; the mass they gain is taken
    proportionally from the entries above the floor. ``T`` may be a scalar
    or one training length per row of ``pmf``.
    """
    p = np.array(validate_pmf(pmf), dtype=float)
    pmin = np.asarray(pmin_for_training_length(T), dtype=float)
    squeeze = p.ndim == 1
    p = np.atleast_2d(p)
    pmin = np.broadcast_to(pmin.reshape(-1, 1) if pmin.ndim else pmin, (p.shape[0], 1))
    low = p < pmin
    if not np.any(low):
        return p[0] if squeeze else p
    n_low = low.sum(axis=1, keepdims=True)
    high_mass = np.where(low, 0.0, p).sum(axis=1, keepdims=True)
    scale = (1.0 - n_low * pmin) / high_mass
    out = np.where(low, pmin, p * scale)
    return out[0] if squeeze else out


def skill_score(mean_score: float, mean_score_ref: float) -> float:
    if not mean_score_ref > 0:
        raise ValueError("reference mean score must be positive")
    return 1.0 - mean_score / mean_score_ref


def pit_values(pmf, obs, rng: np.random.Generator):
    """Randomized PIT: uniform draw on [F(x-), F(x)] at the observed okta."""
    p = validate_pmf(pmf)
    k = _obs_index(obs)
    cdf = np.cumsum(p, axis=-1)
    cdf[..., -1] = 1.0
    upper = np.take_along_axis(cdf, np.expand_dims(k, -1), axis=-1)[..., 0]
    lower = np.where(
        k > 0,
        np.take_along_axis(cdf, np.expand_dims(np.maximum(k - 1, 0), -1), axis=-1)[..., 0],
        0.0,
    )
    u = rng.random(np.shape(upper))
    out = np.clip(lower + u * (upper - lower), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def pit_value(pmf, obs, rng: np.random.Generator) -> float:
    return float(pit_values(pmf, obs, rng))


def pit_histogram(pit, bins: int = 20) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(pit), bins=bins, range=(0.0, 1.0))
    return counts


# --------------------------------------------------------------------------
# Series comparison


@dataclass(frozen=True)
class ScoreSeries:
    values: np.ndarray
    dates: np.ndarray
    station_id: str = ""
    method_id: str = ""
    lead_time: int = 1
    score_kind: str = "CRPS"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        d = np.asarray(self.dates)
        if v.shape != d.shape or v.ndim != 1:
            raise ValueError("values and dates must be 1-D of equal length")
        if not np.all(np.isfinite(v)):
            raise ValueError("score series contains non-finite values")
        if d.size > 1 and not np.all(d[1:] > d[:-1]):
            raise ValueError("dates must be strictly increasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dates", d)

    def comparable_with(self, other: "ScoreSeries") -> bool:
        return (
            self.station_id == other.station_id
            and self.lead_time == other.lead_time
            and self.score_kind == other.score_kind
            and self.dates.shape == other.dates.shape
            and bool(np.all(self.dates == other.dates))
        )


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    direction: int


def hac_variance(d, lag: int) -> float:
    """Rectangular-kernel long-run variance of ``d`` up to ``lag``."""
    d = np.asarray(d, dtype=float)
    n = d.size
    e = d - d.mean()
    var = e @ e / n
    for j in range(1, min(lag, n - 1) + 1):
        var += 2.0 * (e[j:] @ e[:-j]) / n
    if var <= 0.0 and lag > 0:
        return hac_variance(d, 0)
    return float(var)


def dm_statistic(d, lead_time: int = 1) -> TestResult:
    """Diebold-Mariano test on a loss-differential series.

    Uses a truncated autocovariance estimate with lag ``lead_time - 1`` and
    the standard normal limit for the two-sided p-value.
    """
    d = np.asarray(d, dtype=float)
    n = d.size
    mean = d.mean()
    if np.all(d == d[0]):
        if d[0] == 0.0:
            return TestResult(0.0, 1.0, 0)
        raise DegenerateSeriesError("score differences have zero variance")
    var = hac_variance(d, max(int(lead_time) - 1, 0))
    if var <= 0.0:
        raise DegenerateSeriesError("score differences have zero variance")
    stat = mean / np.sqrt(var / n)
    p = float(2.0 * stats.norm.sf(abs(stat)))
    return TestResult(float(stat), min(max(p, 0.0), 1.0), int(np.sign(mean)))


def dm_test(a: ScoreSeries, b: ScoreSeries, min_length: int = 30) -> TestResult:
    """Diebold-Mariano test of equal mean score for two comparable series.

    A positive statistic means ``a`` has the larger (worse) mean score.
    """
    if not a.comparable_with(b):
        raise IncomparableSeriesError(
            "series differ in station, lead time, score kind or dates"
        )
    if a.values.size < min_length:
        raise ValueError(f"need at least {min_length} cases for the DM test")
    return dm_statistic(a.values - b.values, a.lead_time)


def benjamini_hochberg(p_values: Sequence[float], alpha: float = 0.05) -> set:
    """Indices rejected by the Benjamini-Hochberg step-up rule."""
    p = np.asarray(p_values, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    n = p.size
    if n == 0:
        return set()
    order = np.argsort(p, kind="stable")
    below = p[order] <= alpha * np.arange(1, n + 1) / n
    if not below.any():
        return set()
    k = np.nonzero(below)[0].max()
    return set(int(i) for i in order[: k + 1])


# --------------------------------------------------------------------------
# Stationary bootstrap


def stationary_bootstrap_indices(n: int, n_boot: int, mean_block_len: float, rng) -> np.ndarray:
    """Index matrix (n_boot, n) of stationary-bootstrap resamples.

    Blocks start at uniform positions and have geometric lengths with mean
    ``mean_block_len``; indices wrap around circularly.
    """
    if mean_block_len < 1:
        raise ValueError("mean block length must be >= 1")
    p = 1.0 / mean_block_len
    starts = rng.integers(0, n, size=(n_boot, n))
    restart = rng.random((n_boot, n)) < p
    restart[:, 0] = True
    pos = np.arange(n)
    last = np.maximum.accumulate(np.where(restart, pos, 0), axis=1)
    offset = pos - last
    base = np.take_along_axis(starts, last, axis=1)
    return (base + offset) % n


def stationary_bootstrap_means(series, n_boot: int = 2000, mean_block_len: float = 25.0, rng=None):
    x = np.asarray(series, dtype=float)
    if rng is None:
        rng = np.random.default_rng()
    idx = stationary_bootstrap_indices(x.shape[0], n_boot, mean_block_len, rng)
    return x[idx].mean(axis=1)


def stationary_bootstrap_ci(
    series,
    n_boot: int = 2000,
    mean_block_len: float = 25.0,
    rng: Optional[np.random.Generator] = None,
    level: float = 0.95,
):
    """Percentile confidence interval for the mean via the stationary bootstrap."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise ValueError("need a 1-D series of length >= 10")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if not 0 < level < 1 or n_boot < 1:
        raise ValueError("invalid level or number of bootstrap samples")
    means = stationary_bootstrap_means(x, n_boot, mean_block_len, rng)
    alpha = 1.0 - level
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    if np.all(x == x[0]):
        lo = hi = float(x[0])
    return float(lo), float(hi)
