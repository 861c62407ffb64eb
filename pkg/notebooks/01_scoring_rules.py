# %% [markdown]
# # Scoring rules on the okta scale
#
# A forecast is a PMF over nine okta classes. This walk-through scores a
# few hand-made forecasts with the discrete CRPS and the log score, shows
# the flooring that keeps LogS finite, and draws randomized PIT values.

# %%
import numpy as np

from oktacast.oktas import OKTA_VALUES
from oktacast.verification import (
    crps_discrete,
    floor_pmf,
    log_score,
    pit_histogram,
    pit_values,
    pmin_for_training_length,
)

print("okta values:", OKTA_VALUES)

# %% [markdown]
# A sharp forecast, a climatological one and a badly placed sharp one,
# all scored against an observation of 6 oktas.

# %%
sharp = np.zeros(9)
sharp[6] = 1.0
clim = np.array([0.2, 0.08, 0.06, 0.06, 0.06, 0.07, 0.09, 0.15, 0.23])
wrong = np.zeros(9)
wrong[0] = 1.0
for name, p in [("sharp", sharp), ("climatology", clim), ("wrong", wrong)]:
    with np.errstate(divide="ignore"):
        logs = -np.log(p[6])
    print(f"{name:12s} CRPS {crps_discrete(p, 6):.4f}  LogS {logs:.3f}")

# %% [markdown]
# A zero probability on the observed class gives an infinite log score.
# Flooring raises every entry to p_min = 1 - 0.99**(1/T), T being the
# training length, and renormalizes.

# %%
T = 1826
pmin = pmin_for_training_length(T)
floored = floor_pmf(wrong, T)
print(f"p_min {pmin:.6e}")
print("floored LogS", log_score(floored, 6))
print("floored CRPS", crps_discrete(floored, 6), "vs", crps_discrete(wrong, 6))

# %% [markdown]
# Randomized PIT values of a calibrated forecaster are uniform. Here the
# observations are drawn from the forecast PMF itself.

# %%
rng = np.random.default_rng(0)
n = 5000
obs = rng.choice(9, size=n, p=clim)
pit = pit_values(np.tile(clim, (n, 1)), obs, rng)
print("PIT counts in 10 bins:", pit_histogram(pit, bins=10))
