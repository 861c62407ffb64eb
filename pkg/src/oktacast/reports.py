"""Summary tables built from a case-level score table.

Every function takes the ``cases`` frame produced by
:func:`oktacast.pipeline.run_experiment` (columns ``station_id``,
``lead_time``, ``method``, ``date``, ``obs_okta``, ``crps``, ``logs``,
``pit``) and returns a new frame; inputs are never modified.
"""

from __future__ import annotations

import itertools

import numpy as np
import pandas as pd

from .verification import (
    DegenerateSeriesError,
    ScoreSeries,
    benjamini_hochberg,
    dm_test,
    pit_histogram,
    stationary_bootstrap_indices,
)

METRICS = ("crps", "logs")
POOLED = "ALL"


def _method_order(cases):
    return list(dict.fromkeys(cases["method"]))


def summary_table(cases: pd.DataFrame) -> pd.DataFrame:
    """Mean score per station, lead time, method and metric, plus pooled rows."""
    rows = []
    for metric in METRICS:
        per = cases.groupby(["station_id", "lead_time", "method"], sort=False)[metric].agg(["mean", "size"])
        for (st, lead, m), r in per.iterrows():
            rows.append((st, lead, m, metric, r["mean"], int(r["size"])))
        pooled = cases.groupby(["lead_time", "method"], sort=False)[metric].agg(["mean", "size"])
        for (lead, m), r in pooled.iterrows():
            rows.append((POOLED, lead, m, metric, r["mean"], int(r["size"])))
    out = pd.DataFrame(rows, columns=["station_id", "lead_time", "method", "metric", "mean", "n"])
    return out.sort_values(["metric", "station_id", "lead_time", "method"], kind="stable").reset_index(drop=True)


def _aligned(cases, lead, metric, method, station=None):
    """Daily series of a method's score; pooled runs average over stations per date."""
    sel = cases[(cases["lead_time"] == lead) & (cases["method"] == method)]
    if station is not None:
        sel = sel[sel["station_id"] == station]
    return sel.groupby("date", sort=True)[metric].mean()


def skill_with_ci(scores, ref_scores, n_boot=2000, mean_block_len=25.0, rng=None, level=0.95):
    """Skill ``1 - mean(scores)/mean(ref)`` with a paired stationary-bootstrap CI."""
    a = np.asarray(scores, dtype=float)
    b = np.asarray(ref_scores, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two aligned 1-D score series")
    if not b.mean() > 0:
        raise ValueError("reference mean score must be positive")
    skill = 1.0 - a.mean() / b.mean()
    rng = np.random.default_rng(rng)
    idx = stationary_bootstrap_indices(a.size, n_boot, mean_block_len, rng)
    boot = 1.0 - a[idx].mean(axis=1) / b[idx].mean(axis=1)
    alpha = 1.0 - level
    lo, hi = np.quantile(boot, [alpha / 2, 1 - alpha / 2])
    if np.all(a == b):
        lo = hi = 0.0
    return float(skill), float(min(lo, skill)), float(max(hi, skill))


def skill_table(
    cases: pd.DataFrame,
    reference: str,
    n_boot: int = 2000,
    mean_block_len: float = 25.0,
    seed: int = 0,
    per_station: bool = False,
) -> pd.DataFrame:
    """CRPSS/LogSS of every method against ``reference`` with bootstrap CIs.

    Pooled rows (``station_id == "ALL"``) bootstrap the per-date average over
    stations, which keeps the cross-station dependence intact.
    """
    if reference not in set(cases["method"]):
        raise KeyError(f"reference method {reference!r} not found in the scores")
    rows = []
    stations = [None] + (sorted(cases["station_id"].unique()) if per_station else [])
    for metric in METRICS:
        for lead in sorted(cases["lead_time"].unique()):
            for station in stations:
                ref = _aligned(cases, lead, metric, reference, station)
                for k, m in enumerate(_method_order(cases)):
                    s = _aligned(cases, lead, metric, m, station)
                    if not s.index.equals(ref.index):
                        raise ValueError(f"{m} and {reference} were scored on different dates")
                    rng = np.random.default_rng([seed, int(lead), k, METRICS.index(metric)])
                    skill, lo, hi = skill_with_ci(s.values, ref.values, n_boot, mean_block_len, rng)
                    rows.append((station or POOLED, int(lead), m, metric, skill, lo, hi))
    return pd.DataFrame(
        rows, columns=["station_id", "lead_time", "method", "metric", "skill", "ci_lo", "ci_hi"]
    )


def dm_matrix(
    cases: pd.DataFrame,
    alpha: float = 0.05,
    methods=None,
    metrics=METRICS,
    min_length: int = 30,
) -> pd.DataFrame:
    """Share of stations where two methods differ significantly in mean score.

    For each lead time, metric and pair, one DM test per station yields a
    p-value; the Benjamini-Hochberg rule at level ``alpha`` is applied
    across stations. ``n_a_better`` counts rejections where ``method_a``
    has the lower mean score.
    """
    methods = list(methods) if methods is not None else _method_order(cases)
    stations = sorted(cases["station_id"].unique())
    rows = []
    for metric in metrics:
        for lead in sorted(cases["lead_time"].unique()):
            sub = cases[cases["lead_time"] == lead]
            series = {}
            for (st, m), g in sub.groupby(["station_id", "method"], sort=False):
                g = g.sort_values("date")
                series[(st, m)] = ScoreSeries(g[metric].values, g["date"].values, st, m, int(lead), metric)
            for a, b in itertools.combinations(methods, 2):
                pvals, signs = [], []
                for st in stations:
                    if (st, a) not in series or (st, b) not in series:
                        continue
                    try:
                        res = dm_test(series[(st, a)], series[(st, b)], min_length)
                    except DegenerateSeriesError:
                        # a constant nonzero difference is a certain difference
                        d = series[(st, a)].values - series[(st, b)].values
                        pvals.append(0.0)
                        signs.append(int(np.sign(d.mean())))
                        continue
                    pvals.append(res.p_value)
                    signs.append(res.direction)
                rejected = benjamini_hochberg(pvals, alpha)
                n = len(pvals)
                n_sig = len(rejected)
                a_better = sum(1 for i in rejected if signs[i] < 0)
                for x, y, better in ((a, b, a_better), (b, a, n_sig - a_better)):
                    rows.append((int(lead), metric, x, y, n, n_sig, better, n_sig / n if n else np.nan))
    return pd.DataFrame(
        rows,
        columns=["lead_time", "metric", "method_a", "method_b", "n_stations", "n_significant",
                 "n_a_better", "proportion"],
    )


def pit_table(cases: pd.DataFrame, bins: int = 20) -> pd.DataFrame:
    """PIT histogram counts per lead time and method, pooled over stations."""
    rows = []
    for lead in sorted(cases["lead_time"].unique()):
        for m in _method_order(cases):
            pit = cases.loc[(cases["lead_time"] == lead) & (cases["method"] == m), "pit"].values
            counts = pit_histogram(pit, bins)
            for b, c in enumerate(counts):
                rows.append((int(lead), m, b, b / bins, (b + 1) / bins, int(c)))
    return pd.DataFrame(rows, columns=["lead_time", "method", "bin", "lower", "upper", "count"])
