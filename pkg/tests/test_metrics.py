import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from amoctip.metrics import (accuracy, accuracy_by_lead, accuracy_grid, bootstrap, ks_distance,
                             roc_auc, wilson_interval)


def auc_pairs(s, y):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [a for a, l in zip(s, y) if l == 0]
    won = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return won / (len(pos) * len(neg))


def ks_enum(a, b):
    pts = sorted(set(a) | set(b))
    return max(abs(sum(x <= t for x in a) / len(a) - sum(x <= t for x in b) / len(b)) for t in pts)


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1] * 3) == 0.5
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert np.isnan(roc_auc([0.1, 0.2], [1, 1]))


def test_auc_oracle_random(rng):
    for _ in range(100):
        n = rng.integers(2, 15)
        s = rng.integers(0, 5, n) / 4.0
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        assert roc_auc(s, y) == auc_pairs(s, y)


@settings(max_examples=100)
@given(arrays(float, 12, elements=st.integers(-20, 20).map(float)), st.lists(st.integers(0, 1), min_size=12,
                                                             max_size=12))
def test_auc_properties(s, y):
    y = np.array(y)
    if y.min() == y.max():
        return
    assert roc_auc(s, y) + roc_auc(s, 1 - y) == pytest.approx(1.0)
    assert roc_auc(np.exp(s / 4) * 3 + 1, y) == pytest.approx(roc_auc(s, y))


def test_ks_examples():
    assert ks_distance([1, 2, 3], [1, 2, 3]) == 0
    assert ks_distance([1, 2], [5, 6]) == 1
    assert ks_distance([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3)


def test_ks_oracle_random(rng):
    for _ in range(100):
        a = rng.integers(0, 6, rng.integers(1, 8)).tolist()
        b = rng.integers(0, 6, rng.integers(1, 8)).tolist()
        assert ks_distance(a, b) == pytest.approx(ks_enum(a, b), abs=1e-15)


@given(*[arrays(float, st.integers(1, 10), elements=st.floats(-3, 3)) for _ in range(3)])
def test_ks_symmetric_triangle(a, b, c):
    assert ks_distance(a, b) == ks_distance(b, a)
    assert ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-12


def test_accuracy_rule(rng):
    assert accuracy([0.9, 0.1], [1, 0]) == 1.0
    assert accuracy([0.5], [1]) == 0.0  # strictly greater than 0.5
    assert accuracy([0.5], [0]) == 1.0
    s = rng.random(10_000)
    y = rng.integers(0, 2, 10_000)
    lo, hi = wilson_interval(5000, 10_000)
    assert lo - 0.01 < accuracy(s, y) < hi + 0.01


def test_accuracy_by_lead_and_grid():
    s, y, l = [0.9, 0.2, 0.8, 0.7], [1, 0, 0, 1], [0, 0, 100, 100]
    assert accuracy_by_lead(s, y, l) == {0: 1.0, 100: 0.5}
    assert accuracy_by_lead(s[:2], y[:2], [0, 0]) == {0: accuracy(s[:2], y[:2])}
    table, skipped = accuracy_grid({(0.4, 200): (s, y, [150] * 4), (0.3, 100): (s, y, l)}, 150)
    assert table[(0.4, 200)] == (0.75, 4) and skipped == [(0.3, 100)]


def test_bootstrap_covers(rng):
    s = rng.random(200)
    y = (s + rng.normal(0, 0.3, 200) > 0.5).astype(int)
    est = bootstrap(roc_auc, s, y, n_resamples=300, seed=1)
    assert est.low <= est.value <= est.high
    assert est == bootstrap(roc_auc, s, y, n_resamples=300, seed=1)


def test_wilson():
    lo, hi = wilson_interval(0, 10)
    assert lo == 0 and 0.2 < hi < 0.35
