import numpy as np
import pytest

from oktacast.data import SynthConfig, synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_dataset():
    """Two stations, a little over six years, two lead times."""
    return synth_generate(SynthConfig(n_stations=2, n_days=2300, lead_times=(1, 4), seed=11))
