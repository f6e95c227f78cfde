"""Time integration, tipping detection, ensembles, sweeps and hysteresis scans."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import IntegrationError
from .forcing import ForcingScenario, ScenarioGrid, hosing_at, scenario_grid
from .model import OceanState, q_kernel, tendency_kernel
from .params import ModelParams
from .rng import realization_stream

log = logging.getLogger(__name__)

DEFAULT_PERSISTENCE_YEARS = 100
STOCHASTIC_DT = 0.05
DETERMINISTIC_DT = 0.1


# --------------------------------------------------------------------------
# compiled kernels

@njit(cache=True, nogil=True)
def piecewise_hosing(t, kt, kh):
    """Piecewise-linear forcing through knots (kt, kh), constant outside them."""
    if t <= kt[0]:
        return kh[0]
    n = kt.shape[0]
    if t >= kt[n - 1]:
        return kh[n - 1]
    i = 1
    while kt[i] < t:
        i += 1
    t0 = kt[i - 1]
    t1 = kt[i]
    if t1 == t0:
        return kh[i]
    return kh[i - 1] + (kh[i] - kh[i - 1]) * (t - t0) / (t1 - t0)


@njit(cache=True, nogil=True)
def box_drift(x0, x1, t, pv, kt, kh):
    return tendency_kernel(x0, x1, piecewise_hosing(t, kt, kh), pv)


@njit(cache=True, nogil=True)
def ou_drift(x0, x1, t, pv, kt, kh):
    """Linear test drift -theta*x on both components (theta = pv[0])."""
    return -pv[0] * x0, -pv[0] * x1


def _build_em(drift):
    @njit(cache=True, nogil=True)
    def em_kernel(x0, x1, pv, kt, kh, dt, noise, B, record_every, out):
        """Euler-Maruyama over ``noise.shape[0]`` steps.

        ``out[m]`` receives the state before step ``m * record_every``. Returns
        (x0, x1, fail_step) where fail_step is -1 on success, otherwise the
        step whose result was non-finite; the state is then the last finite one.
        """
        sq = math.sqrt(dt)
        b00 = B[0, 0] * sq
        b01 = B[0, 1] * sq
        b10 = B[1, 0] * sq
        b11 = B[1, 1] * sq
        n = noise.shape[0]
        m = 0
        for k in range(n):
            if k % record_every == 0 and m < out.shape[0]:
                out[m, 0] = x0
                out[m, 1] = x1
                m += 1
            f0, f1 = drift(x0, x1, k * dt, pv, kt, kh)
            y0 = x0 + f0 * dt + b00 * noise[k, 0] + b01 * noise[k, 1]
            y1 = x1 + f1 * dt + b10 * noise[k, 0] + b11 * noise[k, 1]
            if not (math.isfinite(y0) and math.isfinite(y1)):
                return x0, x1, k
            x0 = y0
            x1 = y1
        return x0, x1, -1

    return em_kernel


def _build_rk4(drift):
    @njit(cache=True, nogil=True)
    def rk4_kernel(x0, x1, pv, kt, kh, dt, n_steps, record_every, out):
        """Classic fourth-order Runge-Kutta; same conventions as the EM kernel."""
        m = 0
        h2 = 0.5 * dt
        for k in range(n_steps):
            if k % record_every == 0 and m < out.shape[0]:
                out[m, 0] = x0
                out[m, 1] = x1
                m += 1
            t = k * dt
            a0, a1 = drift(x0, x1, t, pv, kt, kh)
            b0, b1 = drift(x0 + h2 * a0, x1 + h2 * a1, t + h2, pv, kt, kh)
            c0, c1 = drift(x0 + h2 * b0, x1 + h2 * b1, t + h2, pv, kt, kh)
            d0, d1 = drift(x0 + dt * c0, x1 + dt * c1, t + dt, pv, kt, kh)
            y0 = x0 + dt / 6.0 * (a0 + 2.0 * b0 + 2.0 * c0 + d0)
            y1 = x1 + dt / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
            if not (math.isfinite(y0) and math.isfinite(y1)):
                return x0, x1, k
            x0 = y0
            x1 = y1
        return x0, x1, -1

    return rk4_kernel


# one compiled stepper per drift; the OU instance validates the box-model one
em_box = _build_em(box_drift)
em_ou = _build_em(ou_drift)
rk4_box = _build_rk4(box_drift)


@njit(cache=True, nogil=True)
def q_from_states(states, pv):
    out = np.empty(states.shape[0])
    for i in range(states.shape[0]):
        out[i] = q_kernel(states[i, 0], pv)
    return out


@njit(cache=True, nogil=True)
def _relax(x0, x1, pv, kt, kh, step, tol, max_iter):
    for it in range(max_iter):
        f0, f1 = box_drift(x0, x1, 0.0, pv, kt, kh)
        if abs(f0) < tol and abs(f1) < tol:
            return x0, x1, it
        x0 += step * f0
        x1 += step * f1
    return x0, x1, -1


@njit(cache=True, nogil=True)
def _newton_polish(x0, x1, pv, kt, kh, n_iter):
    """A few Newton steps with a central-difference Jacobian, to round-off level."""
    h = 1e-6
    for _ in range(n_iter):
        f0, f1 = box_drift(x0, x1, 0.0, pv, kt, kh)
        a0, a1 = box_drift(x0 + h, x1, 0.0, pv, kt, kh)
        b0, b1 = box_drift(x0 - h, x1, 0.0, pv, kt, kh)
        c0, c1 = box_drift(x0, x1 + h, 0.0, pv, kt, kh)
        d0, d1 = box_drift(x0, x1 - h, 0.0, pv, kt, kh)
        j00 = (a0 - b0) / (2 * h)
        j10 = (a1 - b1) / (2 * h)
        j01 = (c0 - d0) / (2 * h)
        j11 = (c1 - d1) / (2 * h)
        det = j00 * j11 - j01 * j10
        if det == 0.0:
            break
        x0 -= (j11 * f0 - j01 * f1) / det
        x1 -= (-j10 * f0 + j00 * f1) / det
    return x0, x1


# --------------------------------------------------------------------------
# data types

@dataclass
class Trajectory:
    q_series: np.ndarray
    tip_time: int | None
    scenario: ForcingScenario | None
    seed: int | None = None
    realization_index: int = 0
    final_state: OceanState | None = None


@dataclass
class EnsembleSummary:
    scenario: ForcingScenario
    n_total: int
    n_tipped: int
    tip_time_histogram: np.ndarray = field(repr=False)

    @property
    def tipping_proportion(self) -> float:
        return self.n_tipped / self.n_total

    def mean_forcing_at_tip(self) -> float:
        years = np.nonzero(self.tip_time_histogram)[0]
        if years.size == 0:
            return float("nan")
        weights = self.tip_time_histogram[years]
        h = np.array([hosing_at(self.scenario, float(y)) for y in years])
        return float(np.sum(h * weights) / np.sum(weights))


@dataclass
class EnsembleResult:
    summary: EnsembleSummary
    q: np.ndarray = field(repr=False)
    tip_times: np.ndarray = field(repr=False)  # -1 where no tipping
    seed: int = 0
    dt: float = STOCHASTIC_DT

    def trajectory(self, i: int) -> Trajectory:
        tip = int(self.tip_times[i])
        return Trajectory(self.q[i], tip if tip >= 0 else None, self.summary.scenario,
                          self.seed, i)


# --------------------------------------------------------------------------
# helpers

def _steps_per_year(dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    k = round(1.0 / dt)
    if k < 1 or abs(k * dt - 1.0) > 1e-9:
        raise ValueError(f"dt must divide one year evenly, got {dt}")
    return k


def _span(s: ForcingScenario, T: float | None) -> int:
    years = s.total_years if T is None else int(round(T))
    if years < 1:
        raise ValueError("integration span must cover at least one year")
    return years


def strong_equilibrium(p: ModelParams, hosing: float = 0.0, x0: OceanState | None = None,
                       tol: float = 1e-10, step: float = 0.5,
                       max_iter: int = 50_000_000) -> OceanState:
    """Strong-AMOC fixed point by damped fixed-point iteration on the tendencies."""
    if x0 is None:
        ref = p.reference_state or {"S_Nor": p.S_S + 0.5, "S_Trop": p.S_S + 1.0}
        x0 = OceanState(ref["S_Nor"], ref["S_Trop"])
    kt = np.array([0.0])
    kh = np.array([float(hosing)])
    s_nor, s_trop, it = _relax(x0.S_Nor, x0.S_Trop, p.vector(), kt, kh, step, tol, max_iter)
    if it < 0:
        raise IntegrationError("fixed-point iteration did not converge", (s_nor, s_trop), 0.0)
    # the iteration stops at the tolerance; a short Newton polish removes the
    # residual drift so the state is stationary to round-off
    a, b = _newton_polish(s_nor, s_trop, p.vector(), kt, kh, 3)
    if abs(a - s_nor) < 1e-3 and abs(b - s_trop) < 1e-3:
        s_nor, s_trop = a, b
    return OceanState(s_nor, s_trop, 0.0)


def _check(fail: int, x0: float, x1: float, dt: float):
    if fail >= 0:
        raise IntegrationError(f"non-finite state at t={fail * dt:g} yr",
                               state=(x0, x1), t=fail * dt)


def integrate_knots_deterministic(x0: OceanState, kt, kh, p: ModelParams, dt: float,
                                  years: int) -> tuple[np.ndarray, OceanState]:
    spy = _steps_per_year(dt)
    states = np.empty((years, 2))
    pv = p.vector()
    a, b, fail = rk4_box(x0.S_Nor, x0.S_Trop, pv, np.asarray(kt, float),
                            np.asarray(kh, float), dt, years * spy, spy, states)
    _check(fail, a, b, dt)
    return q_from_states(states, pv), OceanState(a, b, float(years))


def integrate_knots_stochastic(x0: OceanState, kt, kh, p: ModelParams, dt: float, years: int,
                               rng: np.random.Generator,
                               states: np.ndarray | None = None) -> tuple[np.ndarray, OceanState]:
    """EM run sampled yearly; pass a (years, 2) ``states`` array to keep (S_Nor, S_Trop)."""
    spy = _steps_per_year(dt)
    noise = rng.standard_normal((years * spy, 2))
    if states is None:
        states = np.empty((years, 2))
    elif states.shape != (years, 2) or states.dtype != np.float64:
        raise ValueError(f"states buffer must be float64 of shape ({years}, 2)")
    pv = p.vector()
    a, b, fail = em_box(x0.S_Nor, x0.S_Trop, pv, np.asarray(kt, float),
                           np.asarray(kh, float), dt, noise, p.noise_matrix, spy, states)
    _check(fail, a, b, dt)
    return q_from_states(states, pv), OceanState(a, b, float(years))


# --------------------------------------------------------------------------
# public operations

def detect_tipping(traj, persistence_years: int = DEFAULT_PERSISTENCE_YEARS) -> int | None:
    """First year ``y`` with q < 0 throughout ``[y, min(y + persistence_years, end)]``.

    A sub-zero run that reaches the end of the series qualifies even if it is
    shorter than ``persistence_years``.
    """
    if persistence_years < 1:
        raise ValueError("persistence_years must be >= 1")
    q = np.asarray(traj.q_series if isinstance(traj, Trajectory) else traj, dtype=float)
    n = q.size
    neg = q < 0
    if not neg.any():
        return None
    # run[i] = number of consecutive negative samples starting at i
    idx = np.arange(n)
    breaks = np.where(~neg, idx, n)
    next_break = np.minimum.accumulate(breaks[::-1])[::-1]
    run = next_break - idx
    need = np.minimum(persistence_years, n - 1 - idx) + 1
    ok = neg & (run >= need)
    hits = np.flatnonzero(ok)
    return int(hits[0]) if hits.size else None


def integrate_deterministic(x0: OceanState, s: ForcingScenario, p: ModelParams,
                            dt: float = DETERMINISTIC_DT, T: float | None = None,
                            persistence_years: int = DEFAULT_PERSISTENCE_YEARS) -> Trajectory:
    """Noise-free RK4 run; q is sampled at integer years 0..T-1."""
    years = _span(s, T)
    kt, kh = s.knots()
    q, final = integrate_knots_deterministic(x0, kt, kh, p, dt, years)
    return Trajectory(q, detect_tipping(q, persistence_years), s, None, 0, final)


def integrate_stochastic(x0: OceanState, s: ForcingScenario, p: ModelParams, seed: int,
                         realization_index: int = 0, dt: float = STOCHASTIC_DT,
                         T: float | None = None,
                         persistence_years: int = DEFAULT_PERSISTENCE_YEARS) -> Trajectory:
    """Euler-Maruyama run driven by the (seed, realization_index) stream."""
    years = _span(s, T)
    kt, kh = s.knots()
    rng = realization_stream(seed, realization_index)
    q, final = integrate_knots_stochastic(x0, kt, kh, p, dt, years, rng)
    return Trajectory(q, detect_tipping(q, persistence_years), s, seed, realization_index, final)


def integrate_euler(x0: OceanState, s: ForcingScenario, p: ModelParams,
                    dt: float = STOCHASTIC_DT, T: float | None = None) -> np.ndarray:
    """Euler-Maruyama with the noise switched off (all-zero increments)."""
    years = _span(s, T)
    spy = _steps_per_year(dt)
    kt, kh = s.knots()
    states = np.empty((years, 2))
    pv = p.vector()
    a, b, fail = em_box(x0.S_Nor, x0.S_Trop, pv, kt, kh, dt,
                           np.zeros((years * spy, 2)), np.zeros((2, 2)), spy, states)
    _check(fail, a, b, dt)
    return q_from_states(states, pv)


def simulate_ou(theta: float, sigma: float, dt: float, n_records: int, seed: int,
                realization_index: int = 0, record_every: int = 1, burn_in: int = 0,
                x_init: float = 0.0) -> np.ndarray:
    """Path of dx = -theta x dt + sigma dW through the production EM kernel.

    Both components are independent copies. The state is recorded every
    ``record_every`` steps after ``burn_in`` discarded records; returns an
    (n_records, 2) array.
    """
    rng = realization_stream(seed, realization_index)
    total = n_records + burn_in
    noise = rng.standard_normal((total * record_every, 2))
    out = np.empty((total, 2))
    B = np.array([[sigma, 0.0], [0.0, sigma]])
    a, b, fail = em_ou(x_init, x_init, np.array([float(theta)]), np.zeros(1),
                       np.zeros(1), dt, noise, B, record_every, out)
    _check(fail, a, b, dt)
    return out[burn_in:]


def _member(x0, s, p, seed, i, dt, years, persistence):
    rng = realization_stream(seed, i)
    kt, kh = s.knots()
    q, _ = integrate_knots_stochastic(x0, kt, kh, p, dt, years, rng)
    tip = detect_tipping(q, persistence)
    return q, (-1 if tip is None else tip)


def run_ensemble(s: ForcingScenario, n: int, seed: int, p: ModelParams,
                 dt: float = STOCHASTIC_DT,
                 persistence_years: int = DEFAULT_PERSISTENCE_YEARS,
                 workers: int = 1, x0: OceanState | None = None,
                 store=None) -> EnsembleResult:
    """``n`` independent stochastic realizations with indices 0..n-1.

    Output is identical for any ``workers``. When ``store`` (a
    :class:`~amoctip.store.TrajectoryWriter`) is given, each realization is
    written into its own slot as soon as it finishes.
    """
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    x0 = strong_equilibrium(p) if x0 is None else x0
    years = s.total_years
    q = np.empty((n, years))
    tips = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)

    def task(indices):
        for i in indices:
            qi, tip = _member(x0, s, p, seed, i, dt, years, persistence_years)
            q[i] = qi
            tips[i] = tip
            if store is not None:
                store.write(i, qi)
            done[i] = True

    chunks = np.array_split(np.arange(n), max(1, min(n, workers * 4)))
    try:
        if workers <= 1:
            for c in chunks:
                task(c)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for fut in [pool.submit(task, c) for c in chunks]:
                    fut.result()
    except Exception:
        if store is not None:
            store.fail(np.flatnonzero(done), tips)
        raise
    hist = np.bincount(tips[tips >= 0], minlength=years)[:years]
    summary = EnsembleSummary(s, n, int(np.sum(tips >= 0)), hist)
    if store is not None:
        store.finish(tips)
    return EnsembleResult(summary, q, tips, seed, dt)


@dataclass
class SweepResult:
    grid: ScenarioGrid
    cells: list  # row-major list of EnsembleSummary or None
    failures: list  # (scenario, message)

    def proportions(self) -> np.ndarray:
        out = np.full(self.grid.shape, np.nan)
        for k, cell in enumerate(self.cells):
            if cell is not None:
                out[np.unravel_index(k, self.grid.shape)] = cell.tipping_proportion
        return out

    def rows(self):
        for cell in self.cells:
            if cell is not None:
                yield (cell.scenario.magnitude, cell.scenario.ramp_years, cell.n_total,
                       cell.n_tipped, cell.tipping_proportion)


def sweep(grid: ScenarioGrid, n: int, seed: int, p: ModelParams, dt: float = STOCHASTIC_DT,
          persistence_years: int = DEFAULT_PERSISTENCE_YEARS, workers: int = 1,
          progress=None, store_for=None) -> SweepResult:
    """Run an ensemble per grid cell.

    Every cell uses the same seed, so realization ``i`` sees the same noise
    in every scenario (common random numbers across the grid). ``store_for``
    maps a scenario to a trajectory writer when the runs should be kept.
    """
    x0 = strong_equilibrium(p)
    cells, failures = [], []
    for k, s in enumerate(scenario_grid(grid)):
        try:
            writer = store_for(s) if store_for is not None else None
            res = run_ensemble(s, n, seed, p, dt, persistence_years, workers, x0, writer)
            cells.append(res.summary)
        except (IntegrationError, ValueError) as exc:
            log.warning("sweep cell %s failed: %s", s.label, exc)
            cells.append(None)
            failures.append((s, str(exc)))
        if progress is not None:
            progress(k + 1, len(grid.magnitudes) * len(grid.ramp_times), s)
    return SweepResult(grid, cells, failures)


@dataclass
class HysteresisResult:
    forcing_up: np.ndarray
    q_up: np.ndarray
    forcing_down: np.ndarray
    q_down: np.ndarray

    def collapse_forcing(self) -> float:
        """Forcing at the first sub-zero sample of the up-sweep (nan if none)."""
        i = np.flatnonzero(self.q_up < 0)
        return float(self.forcing_up[i[0]]) if i.size else float("nan")

    def recovery_forcing(self) -> float:
        """Forcing at the first positive sample of the down-sweep after a collapse."""
        below = np.flatnonzero(self.q_down < 0)
        if below.size == 0:
            return float("nan")
        i = np.flatnonzero(self.q_down[below[0]:] > 0)
        return float(self.forcing_down[below[0] + i[0]]) if i.size else float("nan")

    def max_branch_gap(self) -> float:
        """Largest |q_up - q_down| at matching forcing (down branch interpolated)."""
        order = np.argsort(self.forcing_down)
        qd = np.interp(self.forcing_up, self.forcing_down[order], self.q_down[order])
        lo, hi = self.forcing_down.min(), self.forcing_down.max()
        mask = (self.forcing_up >= lo) & (self.forcing_up <= hi)
        return float(np.max(np.abs(self.q_up[mask] - qd[mask]))) if mask.any() else 0.0


def hysteresis_scan(p: ModelParams, h_max: float = 0.7, h_min: float = -0.3,
                    years_up: int = 20000, years_down: int = 20000, n_realizations: int = 0,
                    seed: int = 0, dt: float | None = None) -> HysteresisResult:
    """Ramp hosing 0 -> h_max -> h_min and record q along both sweeps.

    With ``n_realizations == 0`` the run is noise-free (RK4); otherwise q is
    the mean over that many stochastic realizations.
    """
    years = years_up + years_down
    kt = np.array([0.0, float(years_up), float(years)])
    kh = np.array([0.0, h_max, h_min])
    x0 = strong_equilibrium(p)
    if n_realizations == 0:
        q, _ = integrate_knots_deterministic(x0, kt, kh, p, dt or DETERMINISTIC_DT, years)
    else:
        acc = np.zeros(years)
        for i in range(n_realizations):
            qi, _ = integrate_knots_stochastic(x0, kt, kh, p, dt or STOCHASTIC_DT, years,
                                               realization_stream(seed, i))
            acc += qi
        q = acc / n_realizations
    t = np.arange(years, dtype=float)
    h = np.interp(t, kt, kh)
    return HysteresisResult(h[:years_up], q[:years_up], h[years_up:], q[years_up:])
