import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from amoctip.ews import kendall_tau, lag1_autocorr, rolling_indicator, variance

finite = st.floats(-1e3, 1e3, allow_nan=False)


def ar1(phi, n, rng):
    x = np.empty(n)
    x[0] = 0
    e = rng.normal(size=n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


def test_alternating():
    assert lag1_autocorr([1, -1] * 50) == pytest.approx(-1, abs=1e-12)


def test_constant_undefined():
    assert np.isnan(lag1_autocorr(np.ones(10)))


def test_ar1(rng):
    assert lag1_autocorr(ar1(0.8, 100_000, rng)) == pytest.approx(0.8, abs=0.01)


def test_variance_examples(rng):
    assert variance(np.ones(5)) == 0
    x = rng.normal(size=50)
    assert variance(3 * x) == pytest.approx(9 * variance(x))
    assert variance(rng.normal(size=1_000_000)) == pytest.approx(1.0, abs=0.005)
    assert variance([1, 2, 3]) == 1.0


@settings(max_examples=100)
@given(arrays(float, st.integers(5, 40), elements=finite), st.floats(-100, 100),
       st.floats(0.1, 10))
def test_translation_and_scale(x, c, k):
    if np.ptp(x) < 1e-3:
        return
    r0, r1 = lag1_autocorr(x), lag1_autocorr(x + c)
    assert (np.isnan(r0) and np.isnan(r1)) or r1 == pytest.approx(r0, abs=1e-6)
    assert variance(x + c) == pytest.approx(variance(x), rel=1e-6, abs=1e-9)
    assert variance(k * x) == pytest.approx(k * k * variance(x), rel=1e-9)


def test_rolling_geometry(rng):
    x = rng.normal(size=500)
    r = rolling_indicator(x, "variance", 200)
    assert r.values.size == 301
    assert r.end_positions[0] == 199
    assert np.all(rolling_indicator(np.ones(300), "variance", 100).values == 0)
    assert rolling_indicator(x[:50], "lag1-autocorr", 200).values.size == 0
    lag = rolling_indicator(x, "lag1-autocorr", 200, detrend_order=None)
    assert lag.values[10] == pytest.approx(lag1_autocorr(x[10:210]), abs=1e-12)


def test_window_size_robustness(rng):
    # a series that slows down towards its end: variance and autocorrelation rise
    n = 1200
    phi = np.linspace(0.2, 0.95, n)
    x = np.zeros(n)
    e = rng.normal(size=n)
    for i in range(1, n):
        x[i] = phi[i] * x[i - 1] + e[i]
    for kind in ("variance", "lag1-autocorr"):
        signs = {np.sign(kendall_tau(rolling_indicator(x, kind, w).values)) for w in (50, 200, 400)}
        assert signs == {1.0}


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4]) == 1
    assert kendall_tau([4, 3, 2, 1]) == -1
    assert kendall_tau([1, 3, 2]) == pytest.approx(1 / 3)
    assert kendall_tau([2, 2, 2]) == 0


@given(arrays(float, st.integers(2, 30), elements=st.integers(-50, 50).map(float)))
def test_kendall_monotone_invariance(x):
    assert kendall_tau(np.exp(x / 10)) == pytest.approx(kendall_tau(x), abs=1e-12)
    assert -1 <= kendall_tau(x) <= 1
