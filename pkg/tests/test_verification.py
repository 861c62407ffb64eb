import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oktacast.oktas import OKTA_VALUES
from oktacast.verification import (
    DegenerateSeriesError,
    IncomparableSeriesError,
    ScoreSeries,
    ZeroProbabilityError,
    benjamini_hochberg,
    crps_discrete,
    dm_statistic,
    dm_test,
    floor_pmf,
    log_score,
    pit_histogram,
    pit_value,
    pit_values,
    pmin_for_training_length,
    skill_score,
    stationary_bootstrap_ci,
    stationary_bootstrap_indices,
)
from oracles import crps_enumeration, random_pmfs


def _series(values, **kw):
    return ScoreSeries(np.asarray(values, float), np.arange(len(values)), **kw)


# --------------------------------------------------------------------------
# CRPS and LogS


def test_crps_matches_enumeration(rng):
    p = random_pmfs(rng, 1000)
    k = rng.integers(0, 9, 1000)
    got = crps_discrete(p, k)
    want = np.array([crps_enumeration(p[i], k[i]) for i in range(1000)])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_crps_point_mass_is_zero():
    for k in range(9):
        assert crps_discrete(np.eye(9)[k], k) == pytest.approx(0.0, abs=1e-15)


def test_crps_uniform_obs_zero():
    y = OKTA_VALUES
    pairs = sum(y[k] - y[l] for k in range(9) for l in range(k))
    assert crps_discrete(np.full(9, 1 / 9), 0) == pytest.approx(y.sum() / 9 - pairs / 81, abs=1e-14)


def test_crps_nonnegative(rng):
    p = random_pmfs(rng, 500, sparsity=0.6)
    assert np.all(crps_discrete(p, rng.integers(0, 9, 500)) >= 0)


def test_log_score_examples():
    assert log_score(np.eye(9)[4], 4) == 0.0
    assert log_score(np.full(9, 1 / 9), 2) == pytest.approx(np.log(9))
    with pytest.raises(ZeroProbabilityError):
        log_score(np.eye(9)[0], 1)


def test_bad_observation():
    with pytest.raises(ValueError):
        crps_discrete(np.full(9, 1 / 9), 9)


# --------------------------------------------------------------------------
# Flooring


def test_pmin_closed_form():
    assert pmin_for_training_length(1826) == pytest.approx(1 - 0.99 ** (1 / 1826), rel=1e-12)
    assert pmin_for_training_length(1826) == pytest.approx(5.5037e-6, rel=1e-4)
    with pytest.raises(ValueError):
        pmin_for_training_length(0.5)


def test_floor_point_mass():
    pm = pmin_for_training_length(100)
    out = floor_pmf(np.eye(9)[0], 100)
    np.testing.assert_allclose(out[1:], pm, rtol=0, atol=0)
    assert out[0] == pytest.approx(1 - 8 * pm, abs=1e-15)


def test_floor_noop():
    p = np.full(9, 1 / 9)
    np.testing.assert_allclose(floor_pmf(p, 1826), p, rtol=0, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=9, max_size=9).filter(lambda v: sum(v) > 1e-3),
    st.integers(1, 5000),
)
def test_floor_properties(v, T):
    p = np.asarray(v) / np.sum(v)
    pm = pmin_for_training_length(T)
    out = floor_pmf(p, T)
    assert abs(out.sum() - 1) <= 1e-12
    assert out.min() >= pm - 1e-15
    assert np.abs(out - p).sum() <= 9 * pm * 2 + 1e-12


def test_floor_rowwise_lengths(rng):
    p = random_pmfs(rng, 3, sparsity=0.6)
    T = np.array([10, 100, 1000])
    out = floor_pmf(p, T)
    for i in range(3):
        np.testing.assert_allclose(out[i], floor_pmf(p[i], T[i]))


# --------------------------------------------------------------------------
# Skill


def test_skill_examples():
    assert skill_score(0.3, 0.3) == 0.0
    assert skill_score(0.1, 0.2) == 0.5
    assert skill_score(0.1, 0.2) > 0
    with pytest.raises(ValueError):
        skill_score(0.1, 0.0)


# --------------------------------------------------------------------------
# PIT


def test_pit_point_mass_uniform(rng):
    u = pit_values(np.tile(np.eye(9)[3], (10000, 1)), np.full(10000, 3), rng)
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_pit_zero_probability_is_deterministic(rng):
    p = np.r_[0.5, 0.0, 0.5, np.zeros(6)]
    assert pit_value(p, 1, rng) == pytest.approx(0.5)
    assert pit_value(p, 1, rng) == pytest.approx(0.5)


def test_pit_reproducible():
    p = np.full(9, 1 / 9)
    a = pit_value(p, 4, np.random.default_rng(1))
    b = pit_value(p, 4, np.random.default_rng(1))
    assert a == b and 4 / 9 <= a <= 5 / 9


def test_pit_ideal_forecaster(rng):
    n = 20000
    p = random_pmfs(rng, n)
    obs = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1).clip(0, 8)
    counts = pit_histogram(pit_values(p, obs, rng), 20)
    assert counts.sum() == n
    assert stats.chisquare(counts).pvalue > 0.01
    assert counts.max() / counts.min() < 1.3


# --------------------------------------------------------------------------
# Diebold-Mariano


def test_dm_identical():
    a = _series(np.random.default_rng(0).random(50))
    r = dm_test(a, a)
    assert r.statistic == 0.0 and r.p_value == 1.0 and r.direction == 0


def test_dm_size(rng):
    rejections = 0
    for _ in range(1000):
        r = dm_statistic(rng.normal(size=200), lead_time=1)
        rejections += r.p_value < 0.05
    assert 0.03 <= rejections / 1000 <= 0.07


def test_dm_shift():
    rng = np.random.default_rng(2)
    r = dm_statistic(1.0 + 0.1 * rng.normal(size=100), lead_time=4)
    assert r.p_value < 1e-6 and r.direction == 1


def test_dm_antisymmetric(rng):
    a = _series(rng.random(60), lead_time=4)
    b = _series(rng.random(60), lead_time=4)
    ab, ba = dm_test(a, b), dm_test(b, a)
    assert ab.statistic == pytest.approx(-ba.statistic)
    assert ab.p_value == pytest.approx(ba.p_value)
    assert ab.direction == -ba.direction


def test_dm_errors(rng):
    a = _series(rng.random(60))
    with pytest.raises(IncomparableSeriesError):
        dm_test(a, _series(rng.random(60), lead_time=2))
    with pytest.raises(IncomparableSeriesError):
        dm_test(a, _series(rng.random(60), station_id="x"))
    with pytest.raises(ValueError):
        dm_test(_series(rng.random(10)), _series(rng.random(10)))
    with pytest.raises(DegenerateSeriesError):
        dm_test(_series(np.ones(40)), _series(np.zeros(40)))


def test_score_series_validation():
    with pytest.raises(ValueError):
        ScoreSeries(np.array([1.0, np.nan]), np.array([0, 1]))
    with pytest.raises(ValueError):
        ScoreSeries(np.array([1.0, 2.0]), np.array([1, 0]))


# --------------------------------------------------------------------------
# Benjamini-Hochberg


def test_bh_examples():
    assert benjamini_hochberg([1.0, 1.0, 1.0]) == set()
    assert benjamini_hochberg([0.01]) == {0}
    assert benjamini_hochberg([0.001, 0.02, 0.03, 0.9], 0.05) == {0, 1, 2}
    assert benjamini_hochberg([]) == set()
    with pytest.raises(ValueError):
        benjamini_hochberg([1.2])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=30),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_bh_monotone_in_alpha(p, a1, a2):
    lo, hi = sorted((a1, a2))
    assert benjamini_hochberg(p, lo) <= benjamini_hochberg(p, hi)


def test_bh_fdr_control(rng):
    fdp = [len(benjamini_hochberg(rng.random(200), 0.05)) > 0 for _ in range(500)]
    # all hypotheses are null, so FDP is 1 whenever anything is rejected
    assert np.mean(fdp) <= 0.065


# --------------------------------------------------------------------------
# Stationary bootstrap


def test_bootstrap_constant():
    assert stationary_bootstrap_ci(np.full(50, 2.5), rng=np.random.default_rng(0)) == (2.5, 2.5)


def test_bootstrap_errors():
    with pytest.raises(ValueError):
        stationary_bootstrap_ci(np.ones(5))
    with pytest.raises(ValueError):
        stationary_bootstrap_ci(np.r_[np.ones(20), np.nan])
    with pytest.raises(ValueError):
        stationary_bootstrap_ci(np.ones(20), mean_block_len=0.5)


def test_bootstrap_indices_structure(rng):
    idx = stationary_bootstrap_indices(100, 50, 10.0, rng)
    assert idx.shape == (50, 100) and idx.min() >= 0 and idx.max() < 100
    steps = np.diff(idx, axis=1)
    continues = (steps == 1) | (steps == -99)
    # restart probability 0.1, so about 90% of steps continue a block
    assert 0.85 < continues.mean() < 0.95


def test_block_length_one_is_iid_bootstrap():
    x = np.random.default_rng(3).normal(size=300)
    idx = stationary_bootstrap_indices(300, 400, 1.0, np.random.default_rng(9))
    iid = np.random.default_rng(9).integers(0, 300, size=(400, 300))
    np.testing.assert_array_equal(idx, iid)
    a = stationary_bootstrap_ci(x, 2000, 1.0, np.random.default_rng(1))
    means = x[np.random.default_rng(2).integers(0, 300, (2000, 300))].mean(axis=1)
    b = np.quantile(means, [0.025, 0.975])
    se = x.std() / np.sqrt(300)
    assert abs(a[0] - b[0]) < 0.2 * se and abs(a[1] - b[1]) < 0.2 * se


def test_bootstrap_coverage_iid(rng):
    hits = 0
    for _ in range(200):
        lo, hi = stationary_bootstrap_ci(rng.normal(size=1000), 500, 1.0, rng)
        hits += lo <= 0 <= hi
    assert 0.92 <= hits / 200 <= 0.98
