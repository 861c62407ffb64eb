"""Forecast/observation datasets: delimited-file I/O and a synthetic generator.

File schema (one row per station, valid date and lead time)::

    station_id,date,lead_time,obs_okta,hres,ctrl,ens_01,...,ens_50,precip_mean

``date`` is ISO-8601, TCC values are fractions in [0, 1], ``obs_okta`` is
the okta index 0..8 and ``precip_mean`` is empty when unavailable.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .oktas import N_CATEGORIES, N_MEMBERS, quantize_tcc

MEMBER_COLUMNS = [f"ens_{i:02d}" for i in range(1, N_MEMBERS + 1)]
COLUMNS = (
    ["station_id", "date", "lead_time", "obs_okta", "hres", "ctrl"]
    + MEMBER_COLUMNS
    + ["precip_mean"]
)
TCC_COLUMNS = ["hres", "ctrl"] + MEMBER_COLUMNS


class DatasetError(ValueError):
    """Schema or content violation in a dataset file."""


@dataclass(frozen=True)
class ForecastTable:
    """Date-ordered arrays for one station and lead time."""

    station_id: str
    lead_time: int
    dates: np.ndarray  # datetime64[D]
    obs: np.ndarray  # okta indices
    hres: np.ndarray
    ctrl: np.ndarray
    members: np.ndarray  # (n, 50)
    precip: np.ndarray  # NaN where missing

    def __len__(self):
        return self.dates.shape[0]

    @property
    def has_precip(self) -> bool:
        return len(self) > 0 and bool(np.all(np.isfinite(self.precip)))

    def subset(self, mask) -> "ForecastTable":
        return ForecastTable(
            self.station_id, self.lead_time, self.dates[mask], self.obs[mask],
            self.hres[mask], self.ctrl[mask], self.members[mask], self.precip[mask],
        )


class StationDataset:
    """Validated collection of forecast/observation records."""

    def __init__(self, frame: pd.DataFrame, validate: bool = True):
        frame = frame.reindex(columns=COLUMNS)
        frame["date"] = frame["date"].astype("datetime64[ns]")
        frame = frame.sort_values(["station_id", "lead_time", "date"], kind="stable")
        self.frame = frame.reset_index(drop=True)
        if validate:
            problems = validate_frame(self.frame)
            if problems:
                raise DatasetError("; ".join(problems[:20]))

    def __len__(self):
        return len(self.frame)

    @property
    def stations(self) -> list:
        return sorted(self.frame["station_id"].unique().tolist())

    @property
    def lead_times(self) -> list:
        return sorted(int(v) for v in self.frame["lead_time"].unique())

    @property
    def has_precip(self) -> bool:
        return len(self.frame) > 0 and bool(self.frame["precip_mean"].notna().all())

    @property
    def date_range(self):
        if len(self.frame) == 0:
            return None
        return self.frame["date"].min(), self.frame["date"].max()

    @cached_property
    def _groups(self):
        return {k: v.index.to_numpy() for k, v in self.frame.groupby(["station_id", "lead_time"])}

    def table(self, station_id: str, lead_time: int) -> ForecastTable:
        rows = self._groups.get((station_id, int(lead_time)))
        if rows is None:
            raise KeyError(f"no data for station {station_id!r}, lead time {lead_time}")
        f = self.frame.iloc[rows]
        return ForecastTable(
            station_id,
            int(lead_time),
            f["date"].to_numpy(dtype="datetime64[D]"),
            f["obs_okta"].to_numpy(dtype=np.int64),
            f["hres"].to_numpy(dtype=float),
            f["ctrl"].to_numpy(dtype=float),
            f[MEMBER_COLUMNS].to_numpy(dtype=float),
            f["precip_mean"].to_numpy(dtype=float),
        )

    def equals(self, other: "StationDataset") -> bool:
        return self.frame.equals(other.frame)


def validate_frame(frame: pd.DataFrame) -> list:
    """List of human-readable problems; row numbers refer to file lines."""
    problems = []
    if len(frame) == 0:
        return problems
    line = frame.index.to_numpy() + 2  # header is line 1
    tcc = frame[TCC_COLUMNS].to_numpy(dtype=float)
    bad = ~np.all(np.isfinite(tcc) & (tcc >= 0.0) & (tcc <= 1.0), axis=1)
    for ln in line[bad]:
        problems.append(f"line {ln}: cloud-cover value outside [0, 1]")
    obs = frame["obs_okta"].to_numpy(dtype=float)
    bad = ~(np.isfinite(obs) & (obs == np.round(obs)) & (obs >= 0) & (obs < N_CATEGORIES))
    for ln in line[bad]:
        problems.append(f"line {ln}: obs_okta must be an integer 0..8")
    lead = frame["lead_time"].to_numpy(dtype=float)
    bad = ~(np.isfinite(lead) & (lead == np.round(lead)) & (lead >= 1) & (lead <= 10))
    for ln in line[bad]:
        problems.append(f"line {ln}: lead_time must be an integer 1..10")
    pr = frame["precip_mean"].to_numpy(dtype=float)
    bad = pr < 0
    for ln in line[bad]:
        problems.append(f"line {ln}: negative precip_mean")
    if frame["date"].isna().any():
        for ln in line[frame["date"].isna().to_numpy()]:
            problems.append(f"line {ln}: unparseable date")
    dup = frame.duplicated(["station_id", "date", "lead_time"], keep="first").to_numpy()
    for ln in line[dup]:
        problems.append(f"line {ln}: duplicate (station_id, date, lead_time)")
    if not problems:
        per_day = frame.groupby(["station_id", "date"])["obs_okta"].nunique()
        for (st, d) in per_day.index[per_day.to_numpy() > 1]:
            problems.append(f"station {st} on {d.date()}: conflicting observations")
    return problems


def load_dataset(path) -> StationDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        frame = pd.read_csv(
            path, dtype={"station_id": str}, keep_default_na=True, float_precision="round_trip"
        )
    except pd.errors.EmptyDataError:
        warnings.warn(f"{path} is empty", stacklevel=2)
        return StationDataset(pd.DataFrame(columns=COLUMNS), validate=False)
    missing = [c for c in COLUMNS if c not in frame.columns]
    extra = [c for c in frame.columns if c not in COLUMNS]
    if missing or extra:
        raise DatasetError(f"header mismatch: missing {missing}, unexpected {extra}")
    if len(frame) == 0:
        warnings.warn(f"{path} contains no records", stacklevel=2)
    frame["date"] = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
    for col in ["lead_time", "obs_okta", "precip_mean"] + TCC_COLUMNS:
        frame[col] = pd.to_numeric(frame[col], errors="coerce")
    problems = validate_frame(frame)
    if problems:
        raise DatasetError("; ".join(problems[:20]))
    frame["lead_time"] = frame["lead_time"].astype(np.int64)
    frame["obs_okta"] = frame["obs_okta"].astype(np.int64)
    return StationDataset(frame, validate=False)


def save_dataset(dataset: StationDataset, path) -> None:
    out = dataset.frame.copy()
    out["date"] = out["date"].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False, lineterminator="\n")


# --------------------------------------------------------------------------
# Synthetic generator


@dataclass
class SynthConfig:
    """Parameters of the synthetic station generator.

    The latent cloud driver follows an AR(1) anomaly around a seasonal
    cycle; the truth is the driver clipped to [0, 1]. The forecast centre
    is drawn so that the driver equals the centre plus independent Gaussian
    error with standard deviation ``error_sd + error_growth * (lead - 1)``
    (capped at ``latent_sd``, beyond which the centre is climatology).
    Members scatter around ``centre + bias`` with that scale times
    ``spread_deflation``. With ``spread_deflation=1``, ``bias=0`` and
    ``hres_noise_ratio=1`` members and truth are exchangeable given the
    centre, i.e. calibrated.
    """

    n_stations: int = 5
    n_days: int = 3000
    lead_times: Sequence[int] = (1, 4, 7)
    start_date: str = "2002-01-01"
    ar_coef: float = 0.7
    latent_sd: float = 0.45
    seasonal_amplitude: float = 0.12
    station_mean_range: tuple = (0.4, 0.65)
    bias: float = 0.1
    spread_deflation: float = 0.5
    error_sd: float = 0.15
    error_growth: float = 0.04
    hres_noise_ratio: float = 0.5
    precip_coupling: float = 1.0
    with_precip: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.n_stations < 1 or self.n_days < 1:
            raise ValueError("n_stations and n_days must be positive")
        if not self.lead_times or any(not 1 <= int(l) <= 10 for l in self.lead_times):
            raise ValueError("lead times must lie in 1..10")
        if len(set(int(l) for l in self.lead_times)) != len(self.lead_times):
            raise ValueError("duplicate lead times")
        if not 0.0 < self.spread_deflation <= 1.0:
            raise ValueError("spread_deflation must lie in (0, 1]")
        if not -1.0 < self.ar_coef < 1.0:
            raise ValueError("ar_coef must lie in (-1, 1)")
        if self.latent_sd <= 0 or self.error_sd <= 0 or self.error_growth < 0:
            raise ValueError("noise scales must be positive")
        if self.hres_noise_ratio < 0 or self.precip_coupling < 0:
            raise ValueError("hres_noise_ratio and precip_coupling must be non-negative")
        lo, hi = self.station_mean_range
        if lo > hi:
            raise ValueError("station_mean_range must be ordered")
        np.datetime64(self.start_date, "D")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator settings: {sorted(unknown)}")
        d = dict(d)
        if "lead_times" in d:
            d["lead_times"] = tuple(int(v) for v in d["lead_times"])
        if "station_mean_range" in d:
            d["station_mean_range"] = tuple(d["station_mean_range"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lead_times"] = list(self.lead_times)
        d["station_mean_range"] = list(self.station_mean_range)
        return d


def _station_frame(cfg: SynthConfig, station_id: str, rng: np.random.Generator) -> pd.DataFrame:
    n = cfg.n_days
    dates = np.datetime64(cfg.start_date, "D") + np.arange(n)
    doy = (dates - dates.astype("datetime64[Y]")).astype(np.int64)
    mu = rng.uniform(*cfg.station_mean_range)
    phase = rng.uniform(0, 2 * np.pi)
    innov = rng.standard_normal(n) * cfg.latent_sd * np.sqrt(1 - cfg.ar_coef**2)
    anomaly = np.empty(n)
    anomaly[0] = rng.standard_normal() * cfg.latent_sd
    for t in range(1, n):
        anomaly[t] = cfg.ar_coef * anomaly[t - 1] + innov[t]
    driver = mu + cfg.seasonal_amplitude * np.cos(2 * np.pi * doy / 365.25 + phase) + anomaly
    obs = quantize_tcc(np.clip(driver, 0.0, 1.0))

    frames = []
    for lead in cfg.lead_times:
        sd = min(cfg.error_sd + cfg.error_growth * (int(lead) - 1), cfg.latent_sd)
        # centre anomaly B with Var(B) = Cov(A, B) = v - sd^2 makes A - B
        # independent of B with variance sd^2
        v = cfg.latent_sd**2
        k = 1.0 - sd**2 / v
        tau = np.sqrt(k * sd**2)
        centre = driver - anomaly + k * anomaly + tau * rng.standard_normal(n) + cfg.bias
        spread = cfg.spread_deflation * sd
        members = np.clip(centre[:, None] + spread * rng.standard_normal((n, N_MEMBERS)), 0, 1)
        ctrl = np.clip(centre + spread * rng.standard_normal(n), 0, 1)
        hres = np.clip(centre + cfg.hres_noise_ratio * spread * rng.standard_normal(n), 0, 1)
        wet = driver + sd * rng.standard_normal(n) - 0.6
        precip = 10.0 * cfg.precip_coupling * np.maximum(wet, 0.0)
        cols = {
            "station_id": station_id,
            "date": pd.to_datetime(dates),
            "lead_time": int(lead),
            "obs_okta": obs,
            "hres": hres,
            "ctrl": ctrl,
        }
        f = pd.DataFrame(cols)
        f = pd.concat([f, pd.DataFrame(members, columns=MEMBER_COLUMNS)], axis=1)
        f["precip_mean"] = precip if cfg.with_precip else np.nan
        frames.append(f)
    return pd.concat(frames, ignore_index=True)


def synth_generate(config: SynthConfig) -> StationDataset:
    """Deterministic synthetic dataset; stations use independent seed streams."""
    config.validate()
    streams = np.random.SeedSequence(config.seed).spawn(config.n_stations)
    width = max(3, len(str(config.n_stations)))
    frames = [
        _station_frame(config, f"S{s + 1:0{width}d}", np.random.default_rng(ss))
        for s, ss in enumerate(streams)
    ]
    return StationDataset(pd.concat(frames, ignore_index=True), validate=False)
