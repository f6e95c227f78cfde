"""Critical-slowing-down indicators and their trend summary.

Indicators are evaluated on sliding windows; position ``i`` of an
:class:`IndicatorSeries` belongs to the window ending at sample
``i + window_length - 1`` of the source series. Undefined values (for
example the autocorrelation of a constant window) are NaN.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

log = logging.getLogger(__name__)

KINDS = ("lag1-autocorr", "variance", "raw-strength")


@dataclass
class IndicatorSeries:
    values: np.ndarray
    kind: str
    window_length: int

    @property
    def end_positions(self) -> np.ndarray:
        return np.arange(self.values.size) + self.window_length - 1


def lag1_autocorr(window) -> float:
    """Pearson correlation of x[:-1] with x[1:]; NaN for zero variance."""
    x = np.asarray(window, dtype=float)
    if x.size < 3:
        raise ValueError("lag-1 autocorrelation needs at least 3 samples")
    x = x - x.mean()
    a, b = x[:-1], x[1:]
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0.0:
        return float("nan")
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


def variance(window) -> float:
    x = np.asarray(window, dtype=float)
    if x.size < 2:
        raise ValueError("variance needs at least 2 samples")
    return float(np.var(x, ddof=1))


def ols_detrend(series, order: int = 1) -> np.ndarray:
    """Remove a least-squares polynomial of the given order fitted over the whole segment."""
    y = np.asarray(series, dtype=float)
    if y.size == 0 or np.ptp(y) == 0:
        return np.zeros_like(y)
    t = np.linspace(-1.0, 1.0, y.size)
    coef = np.polynomial.polynomial.polyfit(t, y, order)
    return y - np.polynomial.polynomial.polyval(t, coef)


def _rolling_lag1(w: np.ndarray) -> np.ndarray:
    a = w[:, :-1] - w[:, :-1].mean(axis=1, keepdims=True)
    b = w[:, 1:] - w[:, 1:].mean(axis=1, keepdims=True)
    num = np.einsum("ij,ij->i", a, b)
    den = np.sqrt(np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b))
    out = np.full(w.shape[0], np.nan)
    ok = den > 0
    out[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    return out


def rolling_indicator(series, kind: str, window_length: int = 200,
                      detrend_order: int | None = 1) -> IndicatorSeries:
    """Evaluate ``kind`` at every window end position of ``series``.

    The series is first detrended by OLS over the full segment
    (``detrend_order=None`` skips this). ``raw-strength`` reports the
    undetrended value at the window end.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown indicator {kind!r}; expected one of {KINDS}")
    x = np.asarray(series, dtype=float)
    if x.size < window_length:
        log.warning("series of %d samples is shorter than the %d-sample window",
                    x.size, window_length)
        return IndicatorSeries(np.empty(0), kind, window_length)
    if kind == "raw-strength":
        return IndicatorSeries(x[window_length - 1:].copy(), kind, window_length)
    if detrend_order is not None:
        x = ols_detrend(x, detrend_order)
    w = sliding_window_view(x, window_length)
    if kind == "variance":
        vals = w.var(axis=1, ddof=1)
    else:
        vals = _rolling_lag1(w)
    return IndicatorSeries(vals, kind, window_length)


def kendall_tau(series) -> float:
    """Kendall tau-b of the series against time; 0 when every value ties."""
    y = np.asarray(series, dtype=float)
    if y.size < 2:
        raise ValueError("Kendall tau needs at least 2 samples")
    y = y[np.isfinite(y)]
    if y.size < 2 or np.all(y == y[0]):
        return 0.0
    tau = stats.kendalltau(np.arange(y.size), y).statistic
    return 0.0 if not np.isfinite(tau) else float(tau)
