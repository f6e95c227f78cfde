import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amoctip.engine import (EnsembleResult, detect_tipping, hysteresis_scan, integrate_deterministic,
                            integrate_euler, integrate_stochastic, run_ensemble, simulate_ou,
                            strong_equilibrium, sweep)
from amoctip.forcing import ForcingScenario, ScenarioGrid
from amoctip.model import OceanState, total_salt, salinity_tendency
from amoctip.store import TrajectoryWriter, read_trajectories


def naive_tip(q, P):
    n = len(q)
    for y in range(n):
        end = min(y + P, n - 1)
        if all(q[k] < 0 for k in range(y, end + 1)):
            return y
    return None


# ---------------------------------------------------------------- tipping rule

def test_tip_simple_crossing():
    q = np.ones(2800)
    q[812:] = -1
    assert detect_tipping(q, 100) == 812


def test_no_crossing():
    assert detect_tipping(np.ones(500), 100) is None


def test_short_dip_recovers():
    q = np.ones(1000)
    q[300:330] = -1
    assert detect_tipping(q, 100) is None


def test_run_reaching_end_qualifies():
    q = np.ones(1000)
    q[960:] = -1
    assert detect_tipping(q, 100) == 960


@settings(max_examples=300)
@given(st.lists(st.sampled_from([-1.0, 1.0, -0.5, 0.0]), min_size=1, max_size=60),
       st.integers(1, 20))
def test_matches_naive_scan(values, P):
    q = np.array(values)
    tip = detect_tipping(q, P)
    assert tip == naive_tip(q, P)
    if tip is not None:
        assert q[tip] < 0 and tip < len(q)
        # idempotent on the truncated tail
        assert detect_tipping(q[tip:], P) == 0


# ---------------------------------------------------------------- integrators

def test_equilibrium_is_fixed_point(params):
    x = strong_equilibrium(params)
    d = salinity_tendency(x, 0.0, params)
    assert max(map(abs, d)) < 1e-10
    tr = integrate_deterministic(x, ForcingScenario(0.0, 1.0, 999.0), params, T=1000)
    assert np.ptp(tr.q_series) < 1e-8
    assert tr.tip_time is None


def test_rk4_halving_dt(params):
    x = strong_equilibrium(params)
    s = ForcingScenario(0.4, 500, 500)
    a = integrate_deterministic(x, s, params, dt=0.1).q_series
    b = integrate_deterministic(x, s, params, dt=0.05).q_series
    assert np.max(np.abs(a - b)) < 1e-6


def test_slow_ramp_collapse_near_053(params):
    x = strong_equilibrium(params)
    s = ForcingScenario(0.6, 10_000, 0)
    tr = integrate_deterministic(x, s, params, T=10_000)
    first = np.flatnonzero(tr.q_series < 0)[0]
    assert 0.6 * first / 10_000 == pytest.approx(0.53, abs=0.02)


def test_zero_noise_matches_deterministic(params):
    x = strong_equilibrium(params)
    s = ForcingScenario(0.42, 800, 1200)
    euler = integrate_euler(x, s, params, dt=0.05)
    rk4 = integrate_deterministic(x, s, params, dt=0.05).q_series
    assert np.max(np.abs(euler - rk4)) < 1e-3
    zero_b = params.replace(B=((0.0, 0.0), (0.0, 0.0)))
    st_ = integrate_stochastic(x, s, zero_b, seed=3).q_series
    np.testing.assert_array_equal(st_, euler)


def test_salt_closure_along_trajectory(params):
    x = strong_equilibrium(params)
    tr = integrate_stochastic(x, ForcingScenario(0.45, 300, 700), params, seed=1)
    s_nor = tr.q_series / (params.lam * params.beta) + params.S_S \
        - params.alpha * (params.T_S - params.T_Nor) / params.beta
    for sn in s_nor[::97]:
        st_ = OceanState(sn, tr.final_state.S_Trop)
        assert total_salt(st_, params) == pytest.approx(params.C, rel=1e-12)


def test_ou_stationary_variance():
    x = np.concatenate([simulate_ou(1.0, 0.5, 0.005, 1000, 42, i, 100, 10) for i in range(500)])
    assert x.size == 1_000_000
    assert x.var() == pytest.approx(0.125, rel=0.01)


def test_stream_determinism(params):
    x = strong_equilibrium(params)
    s = ForcingScenario(0.39, 200, 300)
    a = integrate_stochastic(x, s, params, seed=11, realization_index=5)
    b = integrate_stochastic(x, s, params, seed=11, realization_index=5)
    c = integrate_stochastic(x, s, params, seed=11, realization_index=6)
    np.testing.assert_array_equal(a.q_series, b.q_series)
    assert not np.array_equal(a.q_series, c.q_series)


# ---------------------------------------------------------------- ensembles

def test_worker_count_invariance(params, tmp_path):
    s = ForcingScenario(0.42, 200, 400)
    one = run_ensemble(s, 24, 99, params, workers=1)
    w = TrajectoryWriter(tmp_path / "e.bin", 24, s.total_years, 0.05, 99)
    many = run_ensemble(s, 24, 99, params, workers=8, store=w)
    np.testing.assert_array_equal(one.q, many.q)
    np.testing.assert_array_equal(one.tip_times, many.tip_times)
    stored = read_trajectories(tmp_path / "e.bin")
    np.testing.assert_array_equal(stored.q, one.q)
    recount = sum(detect_tipping(q) is not None for q in stored.q)
    assert recount == one.summary.n_tipped
    assert 0 <= one.summary.tipping_proportion <= 1
    assert stored.manifest["status"] == "complete"
    tr = one.trajectory(3)
    np.testing.assert_array_equal(tr.q_series, integrate_stochastic(
        strong_equilibrium(params), s, params, 99, 3).q_series)


def test_zero_noise_subcritical_never_tips(params):
    p = params.replace(B=((0.0, 0.0), (0.0, 0.0)))
    res = run_ensemble(ForcingScenario(0.3, 500, 500), 5, 0, p)
    assert res.summary.tipping_proportion == 0


def test_failed_ensemble_writes_partial_manifest(params, tmp_path):
    p = params.replace(B=((1e300, 0.0), (0.0, 1e300)))
    s = ForcingScenario(0.3, 100, 100)
    w = TrajectoryWriter(tmp_path / "bad.bin", 4, s.total_years, 0.05, 1)
    from amoctip.errors import IntegrationError
    with pytest.raises(IntegrationError):
        run_ensemble(s, 4, 1, p, store=w)
    import json
    man = json.loads((tmp_path / "bad.json").read_text())
    assert man["status"] == "failed"


@pytest.mark.xfail(strict=True, reason="slow-ramp noisy threshold sits near 0.49 Sv under the "
                   "defaults calibrated for the 21% fast-ramp proportion; see README")
def test_slow_ramp_mean_threshold(params):
    s = ForcingScenario(0.6, 10_000, 0)
    res = run_ensemble(s, 60, 5, params)
    assert res.summary.tipping_proportion == 1.0
    assert res.summary.mean_forcing_at_tip() == pytest.approx(0.43, abs=0.03)


def test_sweep_degenerate_and_noise_free(params):
    g = ScenarioGrid((0.40,), (200,), 300)
    sw = sweep(g, 30, 8, params)
    direct = run_ensemble(ForcingScenario(0.40, 200, 300), 30, 8, params)
    assert sw.cells[0].n_tipped == direct.summary.n_tipped
    p0 = params.replace(B=((0.0, 0.0), (0.0, 0.0)))
    g2 = ScenarioGrid((0.30, 0.65), (200, 2000), 1000)
    props = sweep(g2, 2, 0, p0).proportions()
    assert set(np.unique(props)) <= {0.0, 1.0}
    assert props[0, 0] == 0 and props[1, 1] == 1


# ---------------------------------------------------------------- hysteresis

def test_hysteresis_window(params):
    h = hysteresis_scan(params, 0.7, -0.3, 20_000, 20_000)
    assert h.max_branch_gap() > 5
    assert h.collapse_forcing() > h.recovery_forcing()
    # oracle: two fixed-forcing runs from the two branches at the same forcing
    f = 0.3
    on = integrate_deterministic(strong_equilibrium(params), ForcingScenario(f, 1, 6000), params)
    off_start = OceanState(33.5, 35.0)
    off = integrate_deterministic(off_start, ForcingScenario(f, 1, 6000), params)
    assert on.q_series[-1] - off.q_series[-1] > 5


def test_monostable_branches_coincide(params):
    h = hysteresis_scan(params, 0.15, 0.0, 20_000, 20_000)
    assert h.max_branch_gap() < 0.5
