# %% [markdown]
# # All methods on one synthetic station
#
# Generates five calendar years of training data and one test year for a single
# station, fits every post-processing method and compares mean CRPS and
# LogS with the raw ensemble.

# %%
import numpy as np

from oktacast.data import SynthConfig, synth_generate
from oktacast.features import FORECAST_COLUMNS, feature_matrix
from oktacast.linear import mlr_fit, mlr_predict, polr_fit, polr_predict
from oktacast.neural import MlpConfig, mlp_forward, mlp_train
from oktacast.oktas import raw_ensemble_pmfs
from oktacast.pipeline import first_window_split, tune_gbm, tune_rf
from oktacast.trees import gbm_fit, gbm_predict, rf_fit, rf_predict
from oktacast.verification import crps_discrete, floor_pmf, log_score

data = synth_generate(SynthConfig(n_stations=1, n_days=2191, lead_times=(4,), seed=7))
table = data.table(data.stations[0], 4)
in_test = table.dates >= np.datetime64("2007-01-01")
train, test = table.subset(~in_test), table.subset(in_test)
print(len(train), "training days,", len(test), "test days")


def features(t, variant):
    return feature_matrix(t.hres, t.ctrl, t.members, variant=variant)


# %% [markdown]
# Linear models and the MLP are fitted directly. RF and GBM are tuned on
# the first four years and validated on the fifth, then refitted on all
# five years.

# %%
pmfs = {"RAW": raw_ensemble_pmfs(test.hres, test.ctrl, test.members)}

pmfs["MLR"] = mlr_predict(mlr_fit(features(train, "mlr6"), train.obs), features(test, "mlr6"))
polr = polr_fit(features(train, "full7"), train.obs, nonneg_indices=FORECAST_COLUMNS)
pmfs["POLR"] = polr_predict(polr, features(test, "full7"))
mlp = mlp_train(features(train, "full7"), train.obs, MlpConfig(seed=1))
pmfs["MLP"] = mlp_forward(mlp, features(test, "full7"))

X, Xt = features(train, "full7"), features(test, "full7")
fit_dates, val_dates = first_window_split(train.dates)
tr, va = np.isin(train.dates, fit_dates), np.isin(train.dates, val_dates)
rf_best, _ = tune_rf(X[tr], train.obs[tr], X[va], train.obs[va], n_trees=100, seed=0)
rf = rf_fit(X, train.obs, n_trees=300, depth=rf_best.depth, mtry=rf_best.mtry, seed=0)
pmfs["RF"] = rf_predict(rf, Xt)
gbm_best, _ = tune_gbm(X[tr], train.obs[tr], X[va], train.obs[va])
gbm = gbm_fit(X, train.obs, depth=gbm_best.depth, early_stop_rounds=None, max_rounds=gbm_best.n_rounds)
pmfs["GBM"] = gbm_predict(gbm, Xt)
print("RF", rf_best, "\nGBM", gbm_best, "\nPOLR excluded", sorted(polr.excluded))

# %%
T = len(train)
ref = None
for name, p in pmfs.items():
    crps = crps_discrete(p, test.obs).mean()
    logs = log_score(floor_pmf(p, T), test.obs).mean()
    ref = crps if ref is None else ref
    print(f"{name:5s} CRPS {crps:.4f} (skill {1 - crps / ref:+.3f})  LogS {logs:.3f}")
