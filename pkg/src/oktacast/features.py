"""Predictor vectors derived from a 52-member cloud-cover ensemble."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .oktas import EnsembleForecast

VARIANTS = ("full7", "mlr6", "extended8")

FEATURE_NAMES = {
    "full7": ("ens_mean", "ctrl", "hres", "variance", "p_zero", "p_one", "interaction"),
    "mlr6": ("ens_mean", "ctrl", "hres", "variance", "p_zero", "p_one"),
    "extended8": (
        "ens_mean", "ctrl", "hres", "variance", "p_zero", "p_one", "interaction",
        "precip_mean",
    ),
}

# columns whose effect on cloud cover is constrained to be non-negative in POLR
FORECAST_COLUMNS = (0, 1, 2)


class MissingCovariateError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    ens_mean: float
    ctrl: float
    hres: float
    variance: float
    p_zero: float
    p_one: float
    interaction: float
    d: float
    precip_mean: Optional[float] = None
    variant: str = "full7"

    def to_array(self) -> np.ndarray:
        names = FEATURE_NAMES[self.variant]
        return np.array([getattr(self, name) for name in names], dtype=float)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.to_array(), dtype=dtype)


def _components(hres, ctrl, members):
    hres = np.asarray(hres, dtype=float)
    ctrl = np.asarray(ctrl, dtype=float)
    members = np.asarray(members, dtype=float)
    full = np.concatenate([hres[:, None], ctrl[:, None], members], axis=1)
    ens_mean = members.mean(axis=1)
    variance = full.var(axis=1, ddof=1)
    p_zero = (full == 0.0).mean(axis=1)
    p_one = (full == 1.0).mean(axis=1)
    d = ((hres - 0.5) + (ctrl - 0.5) + (ens_mean - 0.5)) / 3.0
    interaction = variance * np.sign(d) * d**2
    return ens_mean, variance, p_zero, p_one, d, interaction


def feature_matrix(hres, ctrl, members, precip=None, variant: str = "full7") -> np.ndarray:
    """Row-wise feature matrix for arrays of forecasts.

    Parameters
    ----------
    hres, ctrl : array of shape (n,)
    members : array of shape (n, 50)
        Exchangeable members; their order never matters.
    precip : array of shape (n,), optional
        Precipitation-ensemble mean, required for ``extended8``.
    variant : {"full7", "mlr6", "extended8"}

    Returns
    -------
    ndarray of shape (n, 7), (n, 6) or (n, 8)
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown feature variant {variant!r}")
    hres = np.atleast_1d(np.asarray(hres, dtype=float))
    ctrl = np.atleast_1d(np.asarray(ctrl, dtype=float))
    members = np.asarray(members, dtype=float).reshape(hres.shape[0], -1)
    ens_mean, variance, p_zero, p_one, _, interaction = _components(hres, ctrl, members)
    cols = [ens_mean, ctrl, hres, variance, p_zero, p_one]
    if variant != "mlr6":
        cols.append(interaction)
    if variant == "extended8":
        if precip is None:
            raise MissingCovariateError("extended8 features need the precipitation mean")
        precip = np.atleast_1d(np.asarray(precip, dtype=float))
        if np.any(~np.isfinite(precip)):
            raise MissingCovariateError("precipitation mean missing for some forecasts")
        cols.append(precip)
    return np.column_stack(cols)


def extract_features(forecast: EnsembleForecast, variant: str = "full7") -> FeatureVector:
    if variant not in VARIANTS:
        raise ValueError(f"unknown feature variant {variant!r}")
    if variant == "extended8" and forecast.precip_mean is None:
        raise MissingCovariateError("extended8 features need the precipitation mean")
    ens_mean, variance, p_zero, p_one, d, interaction = _components(
        np.array([forecast.hres]), np.array([forecast.ctrl]), forecast.members[None, :]
    )
    return FeatureVector(
        ens_mean=float(ens_mean[0]),
        ctrl=float(forecast.ctrl),
        hres=float(forecast.hres),
        variance=float(variance[0]),
        p_zero=float(p_zero[0]),
        p_one=float(p_one[0]),
        interaction=float(interaction[0]),
        d=float(d[0]),
        precip_mean=None if forecast.precip_mean is None else float(forecast.precip_mean),
        variant=variant,
    )


def as_matrix(x) -> np.ndarray:
    """Coerce a FeatureVector, 1-D or 2-D array into a 2-D float matrix."""
    if isinstance(x, FeatureVector):
        x = x.to_array()
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("features must be a vector or a matrix")
    return arr
