import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oktacast.features import (
    FEATURE_NAMES,
    MissingCovariateError,
    extract_features,
    feature_matrix,
)
from oktacast.oktas import EnsembleForecast


def _fc(hres, ctrl, members, precip=None):
    return EnsembleForecast(hres, ctrl, np.asarray(members, dtype=float), precip_mean=precip)


def test_all_ones():
    f = extract_features(_fc(1.0, 1.0, np.ones(50)))
    assert f.ens_mean == 1.0 and f.variance == 0.0
    assert f.p_zero == 0.0 and f.p_one == 1.0
    assert f.d == 0.5 and f.interaction == 0.0


def test_all_half():
    f = extract_features(_fc(0.5, 0.5, np.full(50, 0.5)))
    assert f.d == 0.0 and f.interaction == 0.0
    assert f.p_zero == 0.0 and f.p_one == 0.0


def test_hand_arithmetic():
    f = extract_features(_fc(1.0, 1.0, np.zeros(50)))
    s2 = (2 * (50 / 52) ** 2 + 50 * (2 / 52) ** 2) / 51
    assert f.ens_mean == 0.0
    assert f.variance == pytest.approx(s2, abs=1e-15)
    assert f.p_zero == pytest.approx(50 / 52, abs=1e-15)
    assert f.p_one == pytest.approx(2 / 52, abs=1e-15)
    assert f.d == pytest.approx(1 / 6, abs=1e-15)
    assert f.interaction == pytest.approx(s2 / 36, abs=1e-15)


def test_variants():
    fc = _fc(0.3, 0.6, np.linspace(0, 1, 50), precip=2.5)
    full = extract_features(fc, "full7").to_array()
    mlr = extract_features(fc, "mlr6").to_array()
    ext = extract_features(fc, "extended8").to_array()
    assert full.shape == (7,) and mlr.shape == (6,) and ext.shape == (8,)
    np.testing.assert_array_equal(mlr, full[:6])
    np.testing.assert_array_equal(ext[:7], full)
    assert ext[7] == 2.5
    assert len(FEATURE_NAMES["extended8"]) == 8


def test_missing_precip():
    fc = _fc(0.3, 0.6, np.linspace(0, 1, 50))
    with pytest.raises(MissingCovariateError):
        extract_features(fc, "extended8")
    with pytest.raises(MissingCovariateError):
        feature_matrix([0.3], [0.6], np.zeros((1, 50)), variant="extended8")
    with pytest.raises(MissingCovariateError):
        feature_matrix([0.3], [0.6], np.zeros((1, 50)), precip=[np.nan], variant="extended8")


def test_matrix_matches_scalar(rng):
    n = 30
    h, c, m, pr = rng.random(n), rng.random(n), rng.random((n, 50)), rng.random(n)
    m[:, :10] = np.round(m[:, :10])
    X = feature_matrix(h, c, m, pr, "extended8")
    for i in range(n):
        f = extract_features(_fc(h[i], c[i], m[i], pr[i]), "extended8").to_array()
        np.testing.assert_allclose(X[i], f, rtol=0, atol=1e-15)


tcc = st.floats(0, 1)
members = arrays(np.float64, 50, elements=st.sampled_from([0.0, 1.0, 0.3, 0.75]) | tcc)


@settings(max_examples=60, deadline=None)
@given(tcc, tcc, members, st.randoms(use_true_random=False))
def test_feature_properties(h, c, m, r):
    f = extract_features(_fc(h, c, m))
    perm = np.array(m)
    r.shuffle(perm)
    g = extract_features(_fc(h, c, perm))
    np.testing.assert_allclose(f.to_array(), g.to_array(), atol=1e-14)
    # two-pass variance oracle
    full = np.concatenate([[h, c], m])
    mu = sum(full) / 52
    s2 = sum((v - mu) ** 2 for v in full) / 51
    assert f.variance == pytest.approx(s2, abs=1e-12)
    for name in ("ens_mean", "ctrl", "hres", "p_zero", "p_one"):
        assert 0.0 <= getattr(f, name) <= 1.0
    assert f.variance >= 0
    if f.variance > 0 and f.d != 0:
        assert np.sign(f.interaction) == np.sign(f.d)
    if f.variance == 0 or f.d == 0:
        assert f.interaction == 0
    np.testing.assert_array_equal(
        extract_features(_fc(h, c, m), "mlr6").to_array(), f.to_array()[:6]
    )
