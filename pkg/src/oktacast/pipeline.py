"""Rolling-window training, tuning protocols and score collection."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .data import ForecastTable, StationDataset
from .features import FORECAST_COLUMNS, feature_matrix
from .linear import FitConfig, mlr_fit, mlr_predict, polr_fit, polr_predict
from .neural import MlpConfig, mlp_forward, mlp_train
from .oktas import N_CATEGORIES, raw_ensemble_pmfs
from .trees import gbm_fit, gbm_predict, rf_fit, rf_predict
from .verification import crps_discrete, floor_pmf, log_score, pit_values

log = logging.getLogger(__name__)

METHODS = ("MLR", "POLR", "MLP", "RF", "GBM")
RAW = "RAW"
SCHEMES = ("non_seasonal", "seasonal")
FEATURE_SETS = ("base", "precip_extended")


class InsufficientHistoryError(ValueError):
    pass


# --------------------------------------------------------------------------
# Windows


def season_of(dates) -> np.ndarray:
    """'summer' for April-September, 'winter' for October-March."""
    months = np.asarray(dates, dtype="datetime64[M]").astype(np.int64) % 12 + 1
    return np.where((months >= 4) & (months <= 9), "summer", "winter")


def _years(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[Y]").astype(np.int64) + 1970


@dataclass(frozen=True)
class TrainingScheme:
    kind: str = "non_seasonal"
    window_years: int = 5

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown training scheme {self.kind!r}")
        if self.window_years < 1:
            raise ValueError("window_years must be positive")


@dataclass
class Split:
    train_dates: np.ndarray
    test_dates: np.ndarray
    test_year: int
    season: Optional[str] = None

    @property
    def key(self) -> str:
        return f"{self.test_year}" + (f"-{self.season}" if self.season else "")


def rolling_windows(available_dates, scheme: TrainingScheme) -> list:
    """Train on ``window_years`` calendar years, test on the next one.

    The window advances one year at a time. Under the seasonal scheme every
    test year is split by season and each part is paired with the
    same-season days of its training window.
    """
    dates = np.unique(np.asarray(available_dates, dtype="datetime64[D]"))
    if dates.size == 0:
        raise InsufficientHistoryError("no dates available")
    years = _years(dates)
    first = years.min()
    n_years = years.max() - first + 1
    if n_years < scheme.window_years:
        raise InsufficientHistoryError(
            f"need at least {scheme.window_years} calendar years, got {n_years}"
        )
    seasons = season_of(dates)
    splits = []
    for test_year in range(first + scheme.window_years, years.max() + 1):
        in_train = (years >= test_year - scheme.window_years) & (years < test_year)
        in_test = years == test_year
        if not in_test.any():
            continue
        if scheme.kind == "non_seasonal":
            splits.append(Split(dates[in_train], dates[in_test], int(test_year)))
            continue
        for season in ("winter", "summer"):
            test = in_test & (seasons == season)
            if not test.any():
                continue
            train = in_train & (seasons == season)
            splits.append(Split(dates[train], dates[test], int(test_year), season))
    return splits


def first_window_split(train_dates):
    """First years of a training window vs its last calendar year."""
    years = _years(train_dates)
    last = years.max()
    if last == years.min():
        raise InsufficientHistoryError("tuning needs at least two calendar years")
    return train_dates[years < last], train_dates[years == last]


# --------------------------------------------------------------------------
# Tuning protocols


def _mean_logs(pmf, y, T):
    return float(np.mean(log_score(floor_pmf(pmf, T), y)))


@dataclass(frozen=True)
class RfParams:
    depth: int
    mtry: int
    val_logs: float = float("nan")


@dataclass(frozen=True)
class GbmParams:
    depth: int
    n_rounds: int
    val_logs: float = float("nan")


def tune_rf(
    X_train, y_train, X_val, y_val,
    depths=(2, 3, 4), mtrys=(1, 2, 3), n_trees: int = 300, seed=None,
) -> tuple:
    """Grid search of forest depth and mtry by validation LogS.

    Returns the winning :class:`RfParams` and the full score table. Ties
    go to the lexicographically smallest ``(depth, mtry)``.
    """
    grid = sorted((int(d), int(m)) for d in depths for m in mtrys)
    if not grid:
        raise ValueError("empty tuning grid")
    T = len(y_train)
    scores = {}
    best = None
    for depth, mtry in grid:
        model = rf_fit(X_train, y_train, n_trees=n_trees, depth=depth, mtry=mtry, seed=seed)
        s = _mean_logs(rf_predict(model, X_val), y_val, T)
        scores[(depth, mtry)] = s
        if best is None or s < best.val_logs:
            best = RfParams(depth, mtry, s)
    return best, scores


def tune_gbm(
    X_train, y_train, X_val, y_val,
    depths=(1, 2, 3, 4), learning_rate: float = 0.1, early_stop_rounds: int = 25,
    max_rounds: int = 1000,
) -> tuple:
    """Early-stopped boosting for each depth; the best validation LogS wins.

    Ties go to the smaller depth.
    """
    depths = sorted(int(d) for d in depths)
    if not depths:
        raise ValueError("empty tuning grid")
    scores = {}
    best = None
    for depth in depths:
        model = gbm_fit(
            X_train, y_train, X_val, y_val, depth=depth, learning_rate=learning_rate,
            early_stop_rounds=early_stop_rounds, max_rounds=max_rounds,
        )
        s = float(model.val_history[model.n_rounds - 1])
        scores[depth] = s
        if best is None or s < best.val_logs:
            best = GbmParams(depth, model.n_rounds, s)
    return best, scores


# --------------------------------------------------------------------------
# Experiment


@dataclass
class ExperimentConfig:
    methods: Sequence[str] = ("RAW", "MLR", "POLR", "MLP", "RF", "GBM")
    schemes: Sequence[str] = ("non_seasonal",)
    feature_sets: Sequence[str] = ("base",)
    lead_times: Optional[Sequence[int]] = None
    stations: Optional[Sequence[str]] = None
    seed: int = 0
    window_years: int = 5
    reference: str = "RAW"
    rf: dict = field(default_factory=lambda: {
        "depths": [2, 3, 4], "mtrys": [1, 2, 3], "tune_trees": 300, "n_trees": 1000,
    })
    gbm: dict = field(default_factory=lambda: {
        "depths": [1, 2, 3, 4], "learning_rate": 0.1, "early_stop_rounds": 25,
        "max_rounds": 1000,
    })
    mlp: dict = field(default_factory=lambda: {
        "l2_factor": 0.1, "val_fraction": 0.15, "patience": 25, "max_epochs": 2000,
    })
    linear: dict = field(default_factory=lambda: {"mlr_l2": 0.0})
    bootstrap: dict = field(default_factory=lambda: {"n_boot": 2000, "mean_block_len": 25})
    keep_pmfs: bool = True
    keep_models: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment settings: {sorted(unknown)}")
        base = cls()
        merged = {}
        for k, v in d.items():
            default = getattr(base, k)
            merged[k] = {**default, **v} if isinstance(default, dict) else v
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("methods", "schemes", "feature_sets", "lead_times", "stations"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    def method_ids(self) -> list:
        ids = []
        if RAW in self.methods:
            ids.append(RAW)
        for fs in self.feature_sets:
            for base in METHODS:
                if base not in self.methods:
                    continue
                for scheme in self.schemes:
                    ids.append(method_id(base, scheme, fs))
        return ids

    def validate(self) -> None:
        for m in self.methods:
            if m not in METHODS and m != RAW:
                raise ValueError(f"unknown method {m!r}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        for fs in self.feature_sets:
            if fs not in FEATURE_SETS:
                raise ValueError(f"unknown feature set {fs!r}")
        if self.reference not in self.method_ids():
            raise ValueError(f"reference method {self.reference!r} is not among the methods")


def method_id(base: str, scheme: str, feature_set: str) -> str:
    return base + ("S" if scheme == "seasonal" else "") + ("-P" if feature_set == "precip_extended" else "")


def parse_method_id(mid: str):
    if mid == RAW:
        return RAW, None, None
    fs = "precip_extended" if mid.endswith("-P") else "base"
    core = mid[:-2] if fs == "precip_extended" else mid
    for base in METHODS:
        if core == base:
            return base, "non_seasonal", fs
        if core == base + "S":
            return base, "seasonal", fs
    raise ValueError(f"unparseable method id {mid!r}")


def feature_variant(base: str, feature_set: str) -> str:
    if feature_set == "precip_extended":
        return "extended8"
    return "mlr6" if base == "MLR" else "full7"


def _seed(*parts) -> np.random.SeedSequence:
    words = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(words)


def _int_seed(*parts) -> int:
    return int(_seed(*parts).generate_state(1)[0])


@dataclass
class ExperimentResult:
    cases: pd.DataFrame
    provenance: pd.DataFrame
    failures: pd.DataFrame
    pmfs: Optional[pd.DataFrame] = None
    models: dict = field(default_factory=dict)
    method_ids: list = field(default_factory=list)

    def mean_scores(self) -> pd.DataFrame:
        return (
            self.cases.groupby(["method", "lead_time"])[["crps", "logs"]].mean().reset_index()
        )


CASE_COLUMNS = ["station_id", "lead_time", "method", "date", "obs_okta", "crps", "logs", "pit"]


def _fit_and_predict(base, X_tr, y_tr, X_te, cfg: ExperimentConfig, variant, seed_parts, state):
    """Fit one method on one window; return test PMFs, model and parameters."""
    if base == "MLR":
        model = mlr_fit(X_tr, y_tr, FitConfig(l2=cfg.linear.get("mlr_l2", 0.0)), variant)
        return mlr_predict(model, X_te), model, {}
    if base == "POLR":
        model = polr_fit(X_tr, y_tr, FitConfig(), FORECAST_COLUMNS, variant)
        return polr_predict(model, X_te), model, {"excluded": sorted(model.excluded)}
    if base == "MLP":
        mcfg = MlpConfig(**{**cfg.mlp, "seed": _int_seed(*seed_parts)})
        model = mlp_train(X_tr, y_tr, mcfg, variant)
        return mlp_forward(model, X_te), model, {"epochs": model.history["epochs"]}
    if base == "RF":
        params = state["rf_params"]
        model = rf_fit(
            X_tr, y_tr, n_trees=int(cfg.rf["n_trees"]), depth=params.depth,
            mtry=params.mtry, seed=_int_seed(*seed_parts),
        )
        return rf_predict(model, X_te), model, {
            "depth": params.depth, "mtry": params.mtry, "tuned_in": state["rf_tuned_in"],
        }
    if base == "GBM":
        params = state["gbm_params"]
        model = gbm_fit(
            X_tr, y_tr, depth=params.depth, learning_rate=float(cfg.gbm["learning_rate"]),
            early_stop_rounds=None, max_rounds=params.n_rounds,
        )
        return gbm_predict(model, X_te), model, {
            "depth": params.depth, "n_rounds": params.n_rounds, "tuned_in": state["gbm_tuned_in"],
        }
    raise ValueError(f"unknown method {base!r}")


def _run_method(table: ForecastTable, mid: str, cfg: ExperimentConfig, station_idx: int):
    base, scheme_kind, fs = parse_method_id(mid)
    variant = feature_variant(base, fs)
    if fs == "precip_extended" and not table.has_precip:
        raise ValueError("precipitation data unavailable for this station")
    X_all = feature_matrix(table.hres, table.ctrl, table.members, table.precip, variant)
    y_all = table.obs
    date_pos = {d: i for i, d in enumerate(table.dates)}
    scheme = TrainingScheme(scheme_kind, cfg.window_years)
    splits = rolling_windows(table.dates, scheme)

    def rows(dates):
        return np.array([date_pos[d] for d in dates], dtype=np.int64)

    pmfs = np.zeros((len(table), N_CATEGORIES))
    floors = np.zeros(len(table))
    tested = np.zeros(len(table), dtype=bool)
    prov, models = [], {}
    state: dict = {}
    for split in splits:
        tr, te = rows(split.train_dates), rows(split.test_dates)
        if np.intersect1d(split.train_dates, split.test_dates).size:
            raise AssertionError("test date inside its own training window")
        X_tr, y_tr = X_all[tr], y_all[tr]
        season_key = split.season or "all"
        if base == "RF" and ("rf", season_key) not in state:
            t_dates, v_dates = first_window_split(split.train_dates)
            params, _ = tune_rf(
                X_all[rows(t_dates)], y_all[rows(t_dates)], X_all[rows(v_dates)],
                y_all[rows(v_dates)], cfg.rf["depths"], cfg.rf["mtrys"],
                int(cfg.rf["tune_trees"]),
                seed=_int_seed(cfg.seed, station_idx, table.lead_time, mid, "tune", season_key),
            )
            state[("rf", season_key)] = (params, split.key)
        if base == "RF":
            state["rf_params"], state["rf_tuned_in"] = state[("rf", season_key)]
        if base == "GBM":
            t_dates, v_dates = first_window_split(split.train_dates)
            params, _ = tune_gbm(
                X_all[rows(t_dates)], y_all[rows(t_dates)], X_all[rows(v_dates)],
                y_all[rows(v_dates)], cfg.gbm["depths"], float(cfg.gbm["learning_rate"]),
                int(cfg.gbm["early_stop_rounds"]), int(cfg.gbm["max_rounds"]),
            )
            state["gbm_params"], state["gbm_tuned_in"] = params, split.key
        seed_parts = (cfg.seed, station_idx, table.lead_time, mid, split.key)
        p, model, info = _fit_and_predict(base, X_tr, y_tr, X_all[te], cfg, variant, seed_parts, state)
        pmfs[te] = p
        floors[te] = len(tr)
        tested[te] = True
        prov.append({
            "station_id": table.station_id, "lead_time": table.lead_time, "method": mid,
            "window": split.key, "n_train": int(len(tr)), "n_test": int(len(te)),
            "params": json.dumps(info, sort_keys=True),
        })
        if cfg.keep_models:
            models[(table.station_id, table.lead_time, mid, split.key)] = model
    return pmfs, floors, tested, prov, models


def _raw_method(table: ForecastTable, cfg: ExperimentConfig):
    splits = rolling_windows(table.dates, TrainingScheme("non_seasonal", cfg.window_years))
    pmfs = raw_ensemble_pmfs(table.hres, table.ctrl, table.members)
    floors = np.zeros(len(table))
    tested = np.zeros(len(table), dtype=bool)
    prov = []
    for split in splits:
        te = np.isin(table.dates, split.test_dates)
        floors[te] = len(split.train_dates)
        tested[te] = True
        prov.append({
            "station_id": table.station_id, "lead_time": table.lead_time, "method": RAW,
            "window": split.key, "n_train": int(len(split.train_dates)),
            "n_test": int(te.sum()), "params": "{}",
        })
    return pmfs, floors, tested, prov, {}


def score_pmfs(table: ForecastTable, mid, pmfs, floors, tested, rng):
    """Case table for one station/lead/method: CRPS unfloored, LogS floored."""
    idx = np.nonzero(tested)[0]
    p = pmfs[idx]
    y = table.obs[idx]
    crps = crps_discrete(p, y)
    floored = floor_pmf(p, floors[idx]) if idx.size else p
    logs = log_score(floored, y) if idx.size else np.zeros(0)
    pit = pit_values(p, y, rng) if idx.size else np.zeros(0)
    return pd.DataFrame({
        "station_id": table.station_id,
        "lead_time": table.lead_time,
        "method": mid,
        "date": table.dates[idx],
        "obs_okta": y,
        "crps": np.atleast_1d(crps),
        "logs": np.atleast_1d(logs),
        "pit": np.atleast_1d(pit),
    })


def _station_lead_tasks(dataset, station, station_idx, lead, cfg, mids):
    table = dataset.table(station, lead)
    out_cases, out_pmfs, out_prov, out_fail, out_models = [], [], [], [], {}
    for mid in mids:
        try:
            if mid == RAW:
                res = _raw_method(table, cfg)
            else:
                res = _run_method(table, mid, cfg, station_idx)
            pmfs, floors, tested, prov, models = res
            rng = np.random.default_rng(_seed(cfg.seed, station_idx, lead, mid, "pit"))
            out_cases.append(score_pmfs(table, mid, pmfs, floors, tested, rng))
            if cfg.keep_pmfs:
                pf = pd.DataFrame(pmfs[tested], columns=[f"p{k}" for k in range(N_CATEGORIES)])
                pf.insert(0, "date", table.dates[tested])
                pf.insert(0, "method", mid)
                pf.insert(0, "lead_time", lead)
                pf.insert(0, "station_id", station)
                out_pmfs.append(pf)
            out_prov.extend(prov)
            out_models.update(models)
        except Exception as exc:  # noqa: BLE001 - failures are reported, never fatal
            log.warning("station %s lead %s method %s failed: %s", station, lead, mid, exc)
            out_fail.append({
                "station_id": station, "lead_time": lead, "method": mid,
                "error": f"{type(exc).__name__}: {exc}",
            })
    return out_cases, out_pmfs, out_prov, out_fail, out_models


def run_experiment(dataset: StationDataset, config: ExperimentConfig, n_jobs: int = 1) -> ExperimentResult:
    """Fit, predict and score every (station, lead time, method) combination.

    Per-task failures are collected in ``result.failures`` and skipped.
    Output row order depends only on the task keys, not on scheduling.
    """
    config.validate()
    stations = list(config.stations) if config.stations else dataset.stations
    leads = [int(l) for l in config.lead_times] if config.lead_times else dataset.lead_times
    mids = config.method_ids()
    all_stations = dataset.stations
    tasks = [
        (st, all_stations.index(st) if st in all_stations else -1, lead)
        for st in stations for lead in leads
    ]

    def run(st, si, lead):
        try:
            return _station_lead_tasks(dataset, st, si, lead, config, mids)
        except KeyError as exc:
            fail = [{"station_id": st, "lead_time": lead, "method": m, "error": f"KeyError: {exc}"}
                    for m in mids]
            return [], [], [], fail, {}

    if n_jobs == 1:
        results = [run(*t) for t in tasks]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(run)(*t) for t in tasks)

    cases, pmfs, prov, fails, models = [], [], [], [], {}
    for c, p, pr, f, m in results:
        cases.extend(c)
        pmfs.extend(p)
        prov.extend(pr)
        fails.extend(f)
        models.update(m)
    order = {m: i for i, m in enumerate(mids)}
    cases_df = pd.concat(cases, ignore_index=True) if cases else pd.DataFrame(columns=CASE_COLUMNS)
    if len(cases_df):
        cases_df = cases_df.assign(_m=cases_df["method"].map(order)).sort_values(
            ["station_id", "lead_time", "_m", "date"], kind="stable"
        ).drop(columns="_m").reset_index(drop=True)
    pmf_df = pd.concat(pmfs, ignore_index=True) if pmfs else None
    return ExperimentResult(
        cases_df,
        pd.DataFrame(prov, columns=["station_id", "lead_time", "method", "window", "n_train", "n_test", "params"]),
        pd.DataFrame(fails, columns=["station_id", "lead_time", "method", "error"]),
        pmf_df,
        models,
        mids,
    )
