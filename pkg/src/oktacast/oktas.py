"""Okta scale, quantization of cloud-cover fractions and the predictive PMF type."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

N_CATEGORIES = 9
N_MEMBERS = 50

OKTA_VALUES = np.array([0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0])
# interior cut points; intervals are [lo, hi) except the last one, [0.99, 1]
QUANTIZATION_BOUNDS = np.array(
    [0.01, 0.1875, 0.3125, 0.4375, 0.5625, 0.6875, 0.8125, 0.99]
)

PMF_TOL = 1e-9


class DomainError(ValueError):
    """A value lies outside the domain of an okta-scale operation."""


def quantize_tcc(value):
    """Map cloud-cover fraction(s) in [0, 1] to okta indices 0..8.

    Works on scalars and arrays. A value sitting exactly on a cut point
    belongs to the upper interval.
    """
    arr = np.asarray(value, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("cloud-cover fraction must lie in [0, 1]")
    idx = np.searchsorted(QUANTIZATION_BOUNDS, arr, side="right")
    if idx.ndim == 0:
        return int(idx)
    return idx.astype(np.int64)


def okta_fraction(index):
    """Cloud-cover fraction of okta index/indices 0..8."""
    arr = np.asarray(index)
    if not np.issubdtype(arr.dtype, np.integer):
        if np.any(arr != np.round(arr)):
            raise DomainError("okta index must be an integer")
        arr = arr.astype(np.int64)
    if np.any(arr < 0) or np.any(arr >= N_CATEGORIES):
        raise DomainError(f"okta index must lie in 0..{N_CATEGORIES - 1}")
    out = OKTA_VALUES[arr]
    if out.ndim == 0:
        return float(out)
    return out


def validate_pmf(probs, tol: float = PMF_TOL) -> np.ndarray:
    """Check PMF invariants on a (..., 9) array and return it as float array."""
    p = np.asarray(probs, dtype=float)
    if p.shape[-1:] != (N_CATEGORIES,):
        raise ValueError(f"PMF must have {N_CATEGORIES} entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("PMF contains non-finite entries")
    if np.any(p < 0.0):
        raise ValueError("PMF contains negative entries")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise ValueError("PMF entries do not sum to 1")
    return p


@dataclass(frozen=True)
class PredictivePmf:
    """Probability mass function over the nine okta categories."""

    probs: np.ndarray

    def __post_init__(self):
        p = validate_pmf(self.probs).copy()
        if p.ndim != 1:
            raise ValueError("PredictivePmf holds a single distribution")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self):
        return N_CATEGORIES

    def __getitem__(self, k):
        return self.probs[k]


@dataclass(frozen=True)
class EnsembleForecast:
    """One 52-member cloud-cover forecast for a station, date and lead time."""

    hres: float
    ctrl: float
    members: np.ndarray
    precip_mean: Optional[float] = None
    station_id: str = ""
    valid_date: Optional[np.datetime64] = None
    lead_time_days: int = 1

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float).copy()
        if m.shape != (N_MEMBERS,):
            raise ValueError(f"expected {N_MEMBERS} exchangeable members, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)
        tcc = np.concatenate([[self.hres, self.ctrl], m])
        if np.any(~np.isfinite(tcc)) or np.any(tcc < 0.0) or np.any(tcc > 1.0):
            raise DomainError("cloud-cover forecasts must lie in [0, 1]")
        if self.precip_mean is not None and not (self.precip_mean >= 0.0):
            raise DomainError("precipitation mean must be non-negative")
        if not 1 <= int(self.lead_time_days) <= 10:
            raise DomainError("lead time must be 1..10 days")

    def all_members(self) -> np.ndarray:
        """HRES, CTRL and the 50 exchangeable members, in that order."""
        return np.concatenate([[self.hres, self.ctrl], self.members])


@dataclass(frozen=True)
class Observation:
    okta_index: int
    station_id: str = ""
    valid_date: Optional[np.datetime64] = None

    def __post_init__(self):
        if not 0 <= int(self.okta_index) < N_CATEGORIES:
            raise DomainError("okta index out of range")
        object.__setattr__(self, "okta_index", int(self.okta_index))

    @property
    def fraction(self) -> float:
        return okta_fraction(self.okta_index)


def raw_ensemble_pmfs(hres, ctrl, members) -> np.ndarray:
    """Empirical okta frequencies of the 52 quantized members, row-wise.

    ``hres`` and ``ctrl`` have shape (n,), ``members`` shape (n, 50).
    Every member gets weight 1/52.
    """
    hres = np.asarray(hres, dtype=float).reshape(-1, 1)
    ctrl = np.asarray(ctrl, dtype=float).reshape(-1, 1)
    members = np.asarray(members, dtype=float).reshape(hres.shape[0], -1)
    full = np.hstack([hres, ctrl, members])
    k = quantize_tcc(full)
    n, m = k.shape
    counts = np.zeros((n, N_CATEGORIES))
    np.add.at(counts, (np.repeat(np.arange(n), m), k.ravel()), 1.0)
    return counts / m


def raw_ensemble_pmf(forecast: EnsembleForecast) -> PredictivePmf:
    """Predictive PMF of the raw ensemble for a single forecast."""
    p = raw_ensemble_pmfs([forecast.hres], [forecast.ctrl], forecast.members[None, :])
    return PredictivePmf(p[0])
