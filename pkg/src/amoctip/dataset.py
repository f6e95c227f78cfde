"""From raw ensembles to detrended, tip-aligned, windowed and split datasets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

TIPPED, NOT_TIPPED = 1, 0


@dataclass(frozen=True)
class WindowPlan:
    n_windows: int = 3
    stride: int = 100
    window_length: int = 200

    def __post_init__(self):
        if self.n_windows < 1:
            raise ConfigError("n_windows must be >= 1")
        if self.stride < 0:
            raise ConfigError("stride must be >= 0")
        if self.window_length < 2:
            raise ConfigError("window_length must be >= 2")

    @property
    def name(self) -> str:
        return f"windows-{self.n_windows}-stride-{self.stride}"

    @property
    def leads(self) -> list[int]:
        return [k * self.stride for k in range(self.n_windows)]


#: the seven sampling strategies compared in the window-plan study
PLAN_VARIANTS = (
    WindowPlan(1, 0), WindowPlan(2, 100), WindowPlan(3, 100), WindowPlan(4, 100),
    WindowPlan(2, 200), WindowPlan(3, 200), WindowPlan(4, 200),
)


@dataclass
class AlignedSeries:
    values: np.ndarray
    label: int
    origin: tuple  # (ensemble id, realization index)
    tip_time: int
    too_short: bool = False

    @property
    def lead_times(self) -> np.ndarray:
        """Lead time of every sample; the last sample has lead 0."""
        return np.arange(self.values.size - 1, -1, -1)


@dataclass
class LabeledWindow:
    values: np.ndarray
    label: int
    lead_time: int
    realization: int


@dataclass
class WindowReport:
    emitted: int = 0
    skipped: int = 0
    too_short: int = 0
    skipped_leads: dict = field(default_factory=dict)


def detrend(q: np.ndarray, tip_times: np.ndarray, scenario: str = "") -> tuple[np.ndarray, np.ndarray]:
    """Subtract the pointwise mean of the non-tipping members from every member.

    Returns (residuals, reference).
    """
    q = np.asarray(q, dtype=float)
    stable = np.asarray(tip_times) < 0
    if not stable.any():
        raise ConfigError(f"scenario {scenario or '?'} has no non-tipping members to detrend with")
    reference = q[stable].mean(axis=0)
    return q - reference, reference


def sample_pseudo_tipping(histogram: np.ndarray, rng: np.random.Generator,
                          series_length: int | None = None, size: int | None = None):
    """Draw tip years from an empirical histogram by inverse CDF.

    ``histogram[y]`` counts tips in year ``y``. Draws are clamped to
    ``series_length``.
    """
    hist = np.asarray(histogram, dtype=float)
    total = hist.sum()
    if hist.size == 0 or total <= 0:
        raise ValueError("tip-time histogram is empty")
    cdf = np.cumsum(hist) / total
    u = rng.random(size)
    years = np.searchsorted(cdf, u, side="right")
    years = np.minimum(years, hist.size - 1)
    if series_length is not None:
        years = np.minimum(years, series_length)
    return int(years) if size is None else years.astype(np.int64)


def align_and_truncate(values: np.ndarray, tip: int, label: int, origin=(0, 0),
                       window_length: int = 200) -> AlignedSeries:
    """Keep samples ``[0, tip)``; the final kept sample has lead time 0."""
    values = np.asarray(values)
    if not 0 < tip <= values.size:
        raise ValueError(f"tip year {tip} outside series of length {values.size}")
    return AlignedSeries(values[:tip].copy(), label, tuple(origin), int(tip),
                         too_short=tip <= window_length)


def window_bounds(series_length: int, plan: WindowPlan) -> list[tuple[int, int, int]]:
    """(start, stop, lead) for every window of ``plan`` that fits the series."""
    out = []
    for lead in plan.leads:
        stop = series_length - lead
        start = stop - plan.window_length
        if start >= 0:
            out.append((start, stop, lead))
    return out


def extract_windows(a: AlignedSeries, plan: WindowPlan,
                    report: WindowReport | None = None) -> list[LabeledWindow]:
    """Windows ending at lead times 0, stride, 2*stride, ...; non-fitting ones are skipped."""
    bounds = window_bounds(a.values.size, plan)
    if report is not None:
        report.emitted += len(bounds)
        fitted = {b[2] for b in bounds}
        for lead in plan.leads:
            if lead not in fitted:
                report.skipped += 1
                report.skipped_leads[lead] = report.skipped_leads.get(lead, 0) + 1
    return [LabeledWindow(a.values[s:e], a.label, lead, a.origin[1]) for s, e, lead in bounds]


def split(realizations, labels, seed: int, ratios=(8, 1, 1)) -> dict[str, np.ndarray]:
    """Realization-level train/val/test split, stratified by label.

    Every realization lands in exactly one partition, so windows from one
    trajectory never straddle partitions.
    """
    from .rng import derived_generator

    realizations = np.asarray(realizations)
    labels = np.asarray(labels)
    if realizations.size < 10:
        raise ConfigError(f"need at least 10 realizations to split, got {realizations.size}")
    if len(np.unique(realizations)) != realizations.size:
        raise ValueError("realization ids must be unique")
    r = np.asarray(ratios, dtype=float)
    frac = r / r.sum()
    rng = derived_generator(seed, "split")
    parts = {"train": [], "val": [], "test": []}
    for lab in np.unique(labels):
        ids = np.sort(realizations[labels == lab])
        ids = ids[rng.permutation(ids.size)]
        n_train = int(round(ids.size * frac[0]))
        n_val = int(round(ids.size * frac[1]))
        parts["train"].append(ids[:n_train])
        parts["val"].append(ids[n_train:n_train + n_val])
        parts["test"].append(ids[n_train + n_val:])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


@dataclass
class PreparedEnsemble:
    """Detrended, aligned series of one scenario plus bookkeeping."""

    aligned: list
    reference: np.ndarray
    tips: np.ndarray          # actual or pseudo tip year per realization
    labels: np.ndarray
    detrended: np.ndarray
    excluded: int


def prepare_ensemble(q: np.ndarray, tip_times: np.ndarray, seed: int,
                     window_length: int = 200, ensemble_id: int = 0,
                     scenario: str = "", balance: bool = True) -> PreparedEnsemble:
    """Detrend, assign pseudo-tips to stable members and align everything.

    With ``balance`` the larger class is subsampled (seeded) to the size of
    the smaller one. Too-short series are dropped and counted.
    """
    from .rng import derived_generator

    tip_times = np.asarray(tip_times)
    detrended, reference = detrend(q, tip_times, scenario)
    tipped = np.flatnonzero(tip_times >= 0)
    stable = np.flatnonzero(tip_times < 0)
    if tipped.size == 0:
        raise ConfigError(f"scenario {scenario or '?'} has no tipping members")
    hist = np.bincount(tip_times[tipped], minlength=q.shape[1])
    rng = derived_generator(seed, "pseudo-tip", ensemble_id)
    pseudo = sample_pseudo_tipping(hist, rng, q.shape[1], size=stable.size)
    tips = tip_times.copy()
    tips[stable] = pseudo
    labels = (tip_times >= 0).astype(np.int64)

    chosen = np.arange(q.shape[0])
    if balance:
        k = min(tipped.size, stable.size)
        pick = derived_generator(seed, "balance", ensemble_id)
        chosen = np.sort(np.concatenate([
            np.sort(pick.choice(tipped, k, replace=False)),
            np.sort(pick.choice(stable, k, replace=False)),
        ]))
    aligned, excluded = [], 0
    for i in chosen:
        a = align_and_truncate(detrended[i], int(tips[i]), int(labels[i]), (ensemble_id, int(i)),
                               window_length)
        if a.too_short:
            excluded += 1
            continue
        aligned.append(a)
    if excluded:
        log.info("%s: excluded %d too-short series", scenario or "ensemble", excluded)
    return PreparedEnsemble(aligned, reference, tips, labels, detrended, excluded)


def windows_array(aligned: list, plan: WindowPlan):
    """Stack all windows of ``aligned`` into arrays (values, labels, leads, realizations)."""
    vals, labs, leads, reals = [], [], [], []
    for a in aligned:
        for w in extract_windows(a, plan):
            vals.append(w.values)
            labs.append(w.label)
            leads.append(w.lead_time)
            reals.append(w.realization)
    if not vals:
        return (np.empty((0, plan.window_length)), np.empty(0, np.int64),
                np.empty(0, np.int64), np.empty(0, np.int64))
    return np.array(vals), np.array(labs), np.array(leads), np.array(reals)
