"""Discrimination and distribution metrics with bootstrap uncertainty."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .rng import derived_generator


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(pos > neg) + P(tie)/2. NaN when one class is missing."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ks_distance(a, b) -> float:
    """Largest gap between the empirical CDFs of two samples."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("KS distance needs two non-empty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of samples where (score > threshold) matches the label."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.size == 0:
        raise ValueError("accuracy of an empty sample")
    return float(np.mean((s > threshold) == y))


def accuracy_by_lead(scores, labels, leads, threshold: float = 0.5) -> dict[int, float]:
    s, y, lead = np.asarray(scores), np.asarray(labels), np.asarray(leads)
    return {int(t): accuracy(s[lead == t], y[lead == t], threshold) for t in np.unique(lead)}


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds are exact at the extremes; avoid round-off residue there
    low = 0.0 if k == 0 else max(0.0, float(centre - half))
    high = 1.0 if k == n else min(1.0, float(centre + half))
    return low, high


@dataclass
class Estimate:
    value: float
    low: float
    high: float

    def as_row(self):
        return [self.value, self.low, self.high]


def bootstrap(metric, *arrays, n_resamples: int = 1000, seed: int = 0, level: float = 0.95,
              purpose: str = "bootstrap") -> Estimate:
    """Percentile bootstrap of ``metric(*arrays)``, resampling rows jointly."""
    arrays = [np.asarray(a) for a in arrays]
    n = arrays[0].size
    value = metric(*arrays)
    rng = derived_generator(seed, purpose)
    draws = np.empty(n_resamples)
    for i in range(n_resamples):
        idx = rng.integers(0, n, n)
        draws[i] = metric(*(a[idx] for a in arrays))
    draws = draws[np.isfinite(draws)]
    if draws.size == 0:
        return Estimate(value, float("nan"), float("nan"))
    tail = (1 - level) / 2
    lo, hi = np.quantile(draws, [tail, 1 - tail])
    return Estimate(float(value), float(lo), float(hi))


def accuracy_grid(cells: dict, lead: int = 150, threshold: float = 0.5):
    """Accuracy per (magnitude, ramp) cell at one lead.

    ``cells`` maps (magnitude, ramp) to (scores, labels, leads). Cells with no
    windows at ``lead`` are skipped and returned in the second element.
    """
    table, skipped = {}, []
    for key in sorted(cells):
        s, y, lt = (np.asarray(a) for a in cells[key])
        m = lt == lead
        if not m.any():
            skipped.append(key)
            continue
        table[key] = (accuracy(s[m], y[m], threshold), int(m.sum()))
    return table, skipped
