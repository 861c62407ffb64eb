# %% [markdown]
# # A small end-to-end experiment
#
# Runs the rolling-window pipeline on three synthetic stations and
# prints the summary, skill, DM-matrix and PIT tables that the command
# line produces.

# %%
from oktacast.data import SynthConfig, synth_generate
from oktacast.pipeline import ExperimentConfig, run_experiment
from oktacast.reports import dm_matrix, pit_table, skill_table, summary_table

data = synth_generate(SynthConfig(n_stations=3, n_days=2400, lead_times=(1, 7), seed=3))
config = ExperimentConfig(
    methods=("RAW", "MLR", "POLR", "MLP", "RF", "GBM"),
    schemes=("non_seasonal",),
    rf={"n_trees": 200, "tune_trees": 100},
    seed=3,
)
result = run_experiment(data, config)
print(len(result.cases), "scored cases;", len(result.failures), "failures")

# %%
print(summary_table(result.cases).to_string(index=False))

# %%
print(skill_table(result.cases, reference="RAW").to_string(index=False))

# %%
print(dm_matrix(result.cases).to_string(index=False))

# %%
pit = pit_table(result.cases, bins=10)
print(pit.to_string(index=False))
