"""Command line front end: one JSON run config, one subcommand per pipeline stage.

Every command writes its data files into ``output_dir`` together with a
``manifest-<command>.json`` recording the config hash, seeds, package
versions and a SHA-256 of each output. Manifests contain no timestamps, so
re-running a command with the same config reproduces every file byte for
byte. Progress goes to standard error; data only goes to files.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 partial sweep.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import dataset as ds
from . import ews, lrp, metrics, store
from .engine import hysteresis_scan, run_ensemble, sweep
from .errors import ConfigError, IntegrationError, NumericError
from .forcing import ForcingScenario, ScenarioGrid, scenario_grid
from .nn import Checkpoint, NetworkSpec, TrainConfig, monitor, predict_probability, train
from .params import load_params

log = logging.getLogger("amoctip")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
COMMANDS = ("simulate", "sweep", "bifurcation", "make-dataset", "train", "predict", "monitor",
            "lrp", "evaluate")
PARTITIONS = ("train", "val", "test", "unused", "excluded")


# --------------------------------------------------------------------------
# configuration

def _build(cls, data, section):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


@dataclass(frozen=True)
class Seeds:
    simulation: int
    split: int
    training: int


@dataclass(frozen=True)
class SimulateSection:
    magnitude: float = 0.42
    ramp_years: float = 800.0
    hold_years: float = 2000.0
    n: int = 800
    dt: float = 0.05
    persistence_years: int = 100


@dataclass(frozen=True)
class SweepSection:
    magnitudes: tuple = (0.38, 0.42)
    ramp_times: tuple = (200.0, 800.0)
    hold_years: float = 2000.0
    n: int = 100
    dt: float = 0.05
    persistence_years: int = 100
    save_trajectories: bool = False


@dataclass(frozen=True)
class BifurcationSection:
    h_max: float = 0.7
    h_min: float = -0.3
    years_up: int = 20000
    years_down: int = 20000
    n_realizations: int = 0
    record_every: int = 10


@dataclass(frozen=True)
class DatasetSection:
    window_length: int = 200
    n_windows: int = 3
    stride: int = 100
    ratios: tuple = (8, 1, 1)
    balance: bool = True
    eval_leads: tuple = (0, 50, 100, 150, 200)


@dataclass(frozen=True)
class MonitorSection:
    precision: str = "float32"
    partition: str = "test"
    max_lead: int = 600


@dataclass(frozen=True)
class LrpSection:
    lead: int = 200
    eps_scale: float = 1e-6


@dataclass(frozen=True)
class EvaluateSection:
    leads: tuple = (100, 150, 200)
    n_resamples: int = 1000
    csd_lead: int = 200
    indicator_max_lead: int = 600
    indicator_stride: int = 10
    grid: bool = False
    grid_lead: int = 150


@dataclass(frozen=True)
class PredictSection:
    input: str = "test_eval.win"
    output: str = "predictions.csv"


@dataclass
class RunConfig:
    seeds: Seeds
    output_dir: Path
    params: Path | None = None
    simulate: SimulateSection = field(default_factory=SimulateSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    bifurcation: BifurcationSection = field(default_factory=BifurcationSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictSection = field(default_factory=PredictSection)
    monitor: MonitorSection = field(default_factory=MonitorSection)
    lrp: LrpSection = field(default_factory=LrpSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def window_plan(self) -> ds.WindowPlan:
        d = self.dataset
        return ds.WindowPlan(d.n_windows, d.stride, d.window_length)

    def scenario(self) -> ForcingScenario:
        s = self.simulate
        return ForcingScenario(float(s.magnitude), float(s.ramp_years), float(s.hold_years))


SECTIONS = {"simulate": SimulateSection, "sweep": SweepSection,
            "bifurcation": BifurcationSection, "dataset": DatasetSection,
            "predict": PredictSection, "monitor": MonitorSection, "lrp": LrpSection,
            "evaluate": EvaluateSection}


def load_config(path) -> RunConfig:
    """Parse and validate a run config; relative paths resolve against its folder."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"seeds", "output_dir", "params", "network", "train", *SECTIONS}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    for key in ("seeds", "output_dir"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    seeds = _build(Seeds, raw["seeds"], "seeds")
    for f in fields(Seeds):
        v = getattr(seeds, f.name)
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"seed {f.name!r} must be a non-negative integer")
    base = path.parent
    params = None
    if raw.get("params") is not None:
        params = (base / raw["params"]).resolve()
        if not params.is_file():
            raise ConfigError(f"parameter file {params} does not exist")
    sections = {k: _build(cls, raw.get(k), k) for k, cls in SECTIONS.items()}
    train_raw = dict(raw.get("train") or {})
    if "seed" in train_raw:
        raise ConfigError("set the training seed under seeds.training, not train.seed")
    net_raw = raw.get("network") or {}
    try:
        network = NetworkSpec.from_dict(net_raw)
        train_cfg = TrainConfig.from_dict({**train_raw, "seed": seeds.training})
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(seeds, (base / raw["output_dir"]).resolve(), params, network=network,
                    train=train_cfg, raw=raw, **sections)
    if cfg.network.input_length != cfg.dataset.window_length:
        raise ConfigError("network.input_length must equal dataset.window_length")
    if cfg.monitor.precision not in ("float32", "float64"):
        raise ConfigError("monitor.precision must be float32 or float64")
    if cfg.monitor.partition not in PARTITIONS[:3]:
        raise ConfigError(f"monitor.partition must be one of {PARTITIONS[:3]}")
    return cfg


# --------------------------------------------------------------------------
# artifacts

class Run:
    """Tracks one command's outputs and writes its manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg, self.command = cfg, command
        self.outputs: list[Path] = []
        self.extra: dict = {}
        cfg.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        p = self.cfg.output_dir / name
        self.outputs.append(p)
        return p

    def need(self, name) -> Path:
        p = self.cfg.output_dir / name
        if not p.exists():
            raise ConfigError(f"{p} not found; run the command that produces it first")
        return p

    def manifest(self, status="complete", error=None):
        import numba
        import scipy
        payload = {
            "command": self.command,
            "status": status,
            "config_sha256": self.cfg.sha256,
            "config": self.cfg.raw,
            "seeds": {f.name: getattr(self.cfg.seeds, f.name) for f in fields(Seeds)},
            "versions": {"amoctip": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__,
                         "python": platform.python_version()},
            "outputs": {p.name: store.sha256_file(p) for p in self.outputs if p.exists()},
        }
        payload.update(self.extra)
        if error is not None:
            payload["error"] = error
        store.write_json(self.cfg.output_dir / f"manifest-{self.command}.json", payload)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# commands

def cmd_simulate(run: Run, workers: int):
    cfg = run.cfg
    s, p = cfg.simulate, load_params(cfg.params)
    scen = cfg.scenario()
    traj = run.path("ensemble.traj")
    run.outputs.append(traj.with_suffix(".json"))
    writer = store.TrajectoryWriter(traj, s.n, scen.total_years, s.dt, cfg.seeds.simulation,
                                    meta={"scenario": scen.to_dict(),
                                          "persistence_years": s.persistence_years})
    log.info("simulating %d members of %s", s.n, scen.label)
    res = run_ensemble(scen, s.n, cfg.seeds.simulation, p, s.dt, s.persistence_years, workers,
                       store=writer)
    summ = res.summary
    lo, hi = metrics.wilson_interval(summ.n_tipped, summ.n_total)
    _write_csv(run.path("simulate_summary.csv"),
               ["magnitude", "ramp_years", "n", "n_tipped", "proportion", "wilson_low",
                "wilson_high", "mean_forcing_at_tip"],
               [[scen.magnitude, scen.ramp_years, summ.n_total, summ.n_tipped,
                 summ.tipping_proportion, lo, hi, summ.mean_forcing_at_tip()]])
    log.info("tipping proportion %.3f", summ.tipping_proportion)
    return EXIT_OK


def _sweep_grid(cfg: RunConfig) -> ScenarioGrid:
    s = cfg.sweep
    return ScenarioGrid(tuple(s.magnitudes), tuple(s.ramp_times), float(s.hold_years))


def _sweep_file(scen: ForcingScenario) -> str:
    return f"sweep_{scen.label}.traj"


def cmd_sweep(run: Run, workers: int):
    cfg = run.cfg
    s = cfg.sweep
    grid = _sweep_grid(cfg)

    def progress(k, total, scen):
        log.info("sweep cell %d/%d (%s)", k, total, scen.label)

    def store_for(scen):
        path = run.path(_sweep_file(scen))
        run.outputs.append(path.with_suffix(".json"))
        return store.TrajectoryWriter(path, s.n, scen.total_years, s.dt, cfg.seeds.simulation,
                                      meta={"scenario": scen.to_dict(),
                                            "persistence_years": s.persistence_years})

    res = sweep(grid, s.n, cfg.seeds.simulation, load_params(cfg.params), s.dt,
                s.persistence_years, workers, progress,
                store_for if s.save_trajectories else None)
    rows = []
    for cell in res.cells:
        if cell is None:
            continue
        lo, hi = metrics.wilson_interval(cell.n_tipped, cell.n_total)
        rows.append([cell.scenario.magnitude, cell.scenario.ramp_years, cell.n_total,
                     cell.n_tipped, cell.tipping_proportion, lo, hi])
    _write_csv(run.path("fig1e.csv"),
               ["magnitude", "ramp_years", "n", "n_tipped", "proportion", "wilson_low",
                "wilson_high"], rows)
    if res.failures:
        run.extra["failed_cells"] = [{"scenario": sc.to_dict(), "error": msg}
                                     for sc, msg in res.failures]
        log.error("%d sweep cells failed", len(res.failures))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_bifurcation(run: Run, workers: int):
    cfg = run.cfg
    b = cfg.bifurcation
    p = load_params(cfg.params)
    res = hysteresis_scan(p, b.h_max, b.h_min, b.years_up, b.years_down, b.n_realizations,
                          cfg.seeds.simulation)
    k = max(1, b.record_every)
    rows = [["up", f, q] for f, q in zip(res.forcing_up[::k], res.q_up[::k])]
    rows += [["down", f, q] for f, q in zip(res.forcing_down[::k], res.q_down[::k])]
    _write_csv(run.path("bifurcation.csv"), ["branch", "forcing", "q"], rows)
    run.extra["summary"] = {"collapse_forcing": _fmt(res.collapse_forcing()),
                            "recovery_forcing": _fmt(res.recovery_forcing()),
                            "max_branch_gap": _fmt(res.max_branch_gap())}
    return EXIT_OK


def cmd_make_dataset(run: Run, workers: int):
    cfg = run.cfg
    d = cfg.dataset
    ens = store.read_trajectories(run.need("ensemble.traj"))
    if ens.manifest.get("status") != "complete":
        raise ConfigError("ensemble.traj is incomplete; re-run simulate")
    label = ens.manifest.get("scenario", {}).get("label", "")
    prep = ds.prepare_ensemble(ens.q, ens.tip_times, cfg.seeds.split, d.window_length,
                               scenario=label, balance=d.balance)
    byid = {a.origin[1]: a for a in prep.aligned}
    ids = np.array(sorted(byid), dtype=np.int64)
    labels = np.array([byid[i].label for i in ids])
    parts = ds.split(ids, labels, cfg.seeds.split, tuple(d.ratios))
    plan = cfg.window_plan
    for name in ("train", "val", "test"):
        arrays = ds.windows_array([byid[i] for i in parts[name]], plan)
        store.write_windows(run.path(f"{name}.win"), *arrays, seed=cfg.seeds.split)
        log.info("%s: %d windows from %d realizations", name, len(arrays[1]), len(parts[name]))
    eval_plan = sorted(set(int(v) for v in d.eval_leads))
    ev = _lead_windows([byid[i] for i in parts["test"]], eval_plan, d.window_length)
    store.write_windows(run.path("test_eval.win"), *ev, seed=cfg.seeds.split)

    partition = np.full(ens.q.shape[0], "unused", dtype=object)
    for name, members in parts.items():
        partition[members] = name
    excluded = [i for i in range(ens.q.shape[0]) if i not in byid and partition[i] == "unused"]
    np.save(run.path("series.npy"), prep.detrended)
    rows = [[i, int(prep.labels[i]), int(prep.tips[i]), partition[i]]
            for i in range(ens.q.shape[0])]
    _write_csv(run.path("series.csv"), ["realization", "label", "tip", "partition"], rows)
    sidecar = {"plan": plan.name, "window_length": d.window_length,
               "detrend_reference_sha256": store.sha256_array(prep.reference),
               "split_seed": cfg.seeds.split, "ratios": list(d.ratios),
               "excluded_too_short": prep.excluded, "unused": len(excluded),
               "partition_sizes": {k: int(v.size) for k, v in parts.items()}}
    store.write_json(run.path("dataset.json"), sidecar)
    run.extra["dataset"] = sidecar
    return EXIT_OK


def _lead_windows(aligned, leads, length):
    vals, labs, lts, reals = [], [], [], []
    for a in aligned:
        for lead in leads:
            stop = a.values.size - lead
            if stop - length >= 0:
                vals.append(a.values[stop - length:stop])
                labs.append(a.label)
                lts.append(lead)
                reals.append(a.origin[1])
    return (np.array(vals).reshape(-1, length), np.array(labs, dtype=np.int64),
            np.array(lts, dtype=np.int64), np.array(reals, dtype=np.int64))


def cmd_train(run: Run, workers: int):
    cfg = run.cfg
    tr = store.read_windows(run.need("train.win"))
    va = store.read_windows(run.need("val.win"))
    keys = np.column_stack([tr["realization"], tr["lead_time"]])

    def progress(epoch, rec):
        log.info("epoch %d loss %.4f val %.4f lr %.5f", epoch, rec["loss"], rec["val_accuracy"],
                 rec["lr"])

    model = run.path("model.bin")
    try:
        chk = train(tr["values"], tr["label"], va["values"], va["label"], cfg.network, cfg.train,
                    progress, sample_keys=keys)
    except NumericError as exc:
        partial = getattr(exc, "checkpoint", None)
        if partial is not None:
            partial.save(run.path("model.partial.bin"))
        raise
    chk.save(model)
    _write_csv(run.path("train_log.csv"), ["epoch", "lr", "loss", "val_accuracy"],
               [[r["epoch"], r["lr"], r["loss"], r["val_accuracy"]] for r in chk.log])
    run.extra["training"] = {"epochs": len(chk.log),
                             "best_val_accuracy": max(r["val_accuracy"] for r in chk.log)}
    return EXIT_OK


def cmd_predict(run: Run, workers: int):
    cfg = run.cfg
    chk = Checkpoint.load(run.need("model.bin"))
    src = Path(cfg.predict.input)
    src = src if src.is_absolute() else run.need(cfg.predict.input)
    win = store.read_windows(src)
    p = predict_probability(chk, win["values"])
    _write_csv(run.path(cfg.predict.output), ["realization", "lead_time", "label", "probability"],
               zip(win["realization"], win["lead_time"], win["label"], p))
    return EXIT_OK


def _series_table(run: Run):
    rows = _read_csv(run.need("series.csv"))
    real = np.array([int(r["realization"]) for r in rows])
    lab = np.array([int(r["label"]) for r in rows])
    tip = np.array([int(r["tip"]) for r in rows])
    part = np.array([r["partition"] for r in rows])
    return real, lab, tip, part


def cmd_monitor(run: Run, workers: int):
    cfg = run.cfg
    m = cfg.monitor
    chk = Checkpoint.load(run.need("model.bin"))
    series = np.load(run.need("series.npy"))
    real, lab, tip, part = _series_table(run)
    ids = real[part == m.partition]
    L = chk.spec.input_length
    dtype = np.float32 if m.precision == "float32" else np.float64
    probs = np.array([monitor(chk, series[i], dtype=dtype) for i in ids])
    np.save(run.path("monitor.npy"), probs)
    # align on the (pseudo-)tip: lead l means the window ends l years before it
    aligned = np.full((ids.size, m.max_lead + 1), np.nan)
    for r, i in enumerate(ids):
        for lead in range(m.max_lead + 1):
            k = tip[i] - 1 - lead - (L - 1)
            if 0 <= k < probs.shape[1]:
                aligned[r, lead] = probs[r, k]
    y = lab[ids]
    rows = []
    for lead in range(m.max_lead + 1):
        a1, a0 = aligned[y == 1, lead], aligned[y == 0, lead]
        a1, a0 = a1[np.isfinite(a1)], a0[np.isfinite(a0)]
        if a1.size == 0 or a0.size == 0:
            continue
        rows.append([lead, a1.size, a1.mean(), a0.size, a0.mean(), np.percentile(a0, 99)])
    _write_csv(run.path("monitor_aligned.csv"),
               ["lead", "n_tipping", "tipping_mean", "n_stable", "stable_mean", "stable_p99"],
               rows)
    stable = probs[y == 0]
    calendar = stable.mean(axis=0) if stable.size else np.empty(0)
    _write_csv(run.path("monitor_calendar.csv"), ["window_end", "stable_mean"],
               [[k + L - 1, v] for k, v in enumerate(calendar)])
    return EXIT_OK


def cmd_lrp(run: Run, workers: int):
    cfg = run.cfg
    chk = Checkpoint.load(run.need("model.bin"))
    win = store.read_windows(run.need("test_eval.win"))
    sel = win["lead_time"] == cfg.lrp.lead
    if not sel.any():
        raise ConfigError(f"test_eval.win has no windows at lead {cfg.lrp.lead}")
    x, y = win["values"][sel], win["label"][sel]
    rmap = lrp.relevance(chk, x, eps_scale=cfg.lrp.eps_scale)
    with open(run.path("relevance.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "lead_time", "t", "strength", "relevance"])
        for r, lead, vals, rel in zip(win["realization"][sel], win["lead_time"][sel], x,
                                      rmap.values):
            for t, sv, rv in lrp.attention_score(lrp.RelevanceMap(rel, rmap.target, 0.0), vals):
                w.writerow([int(r), int(lead), int(t), _fmt(sv), _fmt(rv)])
    err = np.abs(rmap.total - rmap.logit)
    rows = [[int(r), int(lb), lg, tot] for r, lb, lg, tot in
            zip(win["realization"][sel], y, rmap.logit, rmap.total)]
    _write_csv(run.path("lrp_conservation.csv"), ["realization", "label", "logit", "relevance_sum"],
               rows)
    rel_mean = rmap.values.mean(axis=1)
    str_mean = chk.normalize(x).mean(axis=1)
    _write_csv(run.path("fig3_ks.csv"), ["quantity", "ks_distance"],
               [["relevance", metrics.ks_distance(rel_mean[y == 1], rel_mean[y == 0])],
                ["strength", metrics.ks_distance(str_mean[y == 1], str_mean[y == 0])]])
    run.extra["conservation"] = {
        "aggregate_relative_error": _fmt(err.sum() / np.abs(rmap.logit).sum()),
        "fraction_within_5pct": _fmt(np.mean(err <= 0.05 * np.abs(rmap.logit)))}
    return EXIT_OK


def cmd_evaluate(run: Run, workers: int):
    cfg = run.cfg
    e = cfg.evaluate
    pred = _read_csv(run.need(cfg.predict.output))
    lead = np.array([int(r["lead_time"]) for r in pred])
    y = np.array([int(r["label"]) for r in pred])
    p = np.array([float(r["probability"]) for r in pred])
    win = store.read_windows(run.need(cfg.predict.input))
    if win.size != p.size or np.any(win["lead_time"] != lead):
        raise ConfigError("predictions do not match the evaluation windows; re-run predict")
    strength = -win["values"][:, -1]
    seed = cfg.seeds.split
    rows, acc_rows = [], []
    for L in e.leads:
        m = lead == L
        if not m.any():
            log.warning("no evaluation windows at lead %d", L)
            continue
        acc = metrics.bootstrap(metrics.accuracy, p[m], y[m], n_resamples=e.n_resamples,
                                seed=seed, purpose=f"acc-{L}")
        auc = metrics.bootstrap(metrics.roc_auc, p[m], y[m], n_resamples=e.n_resamples,
                                seed=seed, purpose=f"auc-{L}")
        sauc = metrics.bootstrap(metrics.roc_auc, strength[m], y[m], n_resamples=e.n_resamples,
                                 seed=seed, purpose=f"strength-{L}")
        rows += [["accuracy", L, *acc.as_row()], ["auc_cnn", L, *auc.as_row()],
                 ["auc_strength", L, *sauc.as_row()]]
    # accuracy curve pools every lead present in the predictions
    for L, value in metrics.accuracy_by_lead(p, y, lead).items():
        m = lead == L
        k = int(np.sum((p[m] > 0.5) == (y[m] == 1)))
        acc_rows.append([L, int(m.sum()), value, *metrics.wilson_interval(k, int(m.sum()))])

    series = np.load(run.need("series.npy"))
    real, lab, tip, part = _series_table(run)
    used = np.isin(part, ("train", "val", "test"))
    taus = {"variance": [], "lag1-autocorr": []}
    ind = {k: [] for k in taus}
    W = cfg.dataset.window_length
    for i in real[used]:
        hist = series[i, :tip[i]]
        for kind in taus:
            taus[kind].append(ews.kendall_tau(
                ews.rolling_indicator(hist[:hist.size - e.csd_lead], kind, W).values))
            v = ews.rolling_indicator(hist, kind, W).values
            row = np.full(e.indicator_max_lead + 1, np.nan)
            n = min(v.size, row.size)
            row[:n] = v[::-1][:n]
            ind[kind].append(row)
    ycsd = lab[used]
    for kind, name in (("variance", "auc_csd_variance"), ("lag1-autocorr", "auc_csd_ac")):
        est = metrics.bootstrap(metrics.roc_auc, np.array(taus[kind]), ycsd,
                                n_resamples=e.n_resamples, seed=seed, purpose=name)
        rows.append([name, e.csd_lead, *est.as_row()])
    _write_csv(run.path("metrics.csv"), ["metric", "lead", "value", "low", "high"], rows)
    _write_csv(run.path("fig4b_accuracy.csv"),
               ["lead", "n", "accuracy", "wilson_low", "wilson_high"], acc_rows)
    fig2 = []
    var, ac = np.array(ind["variance"]), np.array(ind["lag1-autocorr"])
    with np.errstate(all="ignore"):
        for L in range(e.indicator_max_lead + 1):
            cols = []
            for arr in (var, ac):
                for cls in (1, 0):
                    col = arr[ycsd == cls, L]
                    col = col[np.isfinite(col)]
                    cols.append(col.mean() if col.size else float("nan"))
            fig2.append([L, *cols])
    _write_csv(run.path("fig2_indicators.csv"),
               ["lead", "variance_tipping", "variance_stable", "ac_tipping", "ac_stable"], fig2)
    leads = np.arange(0, e.indicator_max_lead + 1, max(1, e.indicator_stride))
    long_rows = ([int(i), int(L), kind, arr[r, L]]
                 for r, i in enumerate(real[used]) for kind, arr in (("variance", var),
                                                                     ("lag1-autocorr", ac))
                 for L in leads if np.isfinite(arr[r, L]))
    _write_csv(run.path("indicators.csv"), ["realization", "lead_time", "indicator", "value"],
               long_rows)
    if e.grid:
        _evaluate_grid(run)
    return EXIT_OK


def _evaluate_grid(run: Run):
    """Accuracy of the trained model on every stochastic-regime sweep cell."""
    cfg = run.cfg
    e, W = cfg.evaluate, cfg.dataset.window_length
    chk = Checkpoint.load(run.need("model.bin"))
    cells, skipped, props = {}, [], {}
    for k, scen in enumerate(scenario_grid(_sweep_grid(cfg))):
        ens = store.read_trajectories(run.need(_sweep_file(scen)))
        key = (scen.magnitude, scen.ramp_years)
        prop = float(np.mean(ens.tip_times >= 0))
        props[key] = prop
        if not 0.05 <= prop <= 0.95:
            skipped.append({"scenario": scen.label, "reason": f"tipping proportion {prop:.3f}"})
            continue
        prep = ds.prepare_ensemble(ens.q, ens.tip_times, cfg.seeds.split, W, ensemble_id=k + 1,
                                   scenario=scen.label)
        x, y, lt, _ = _lead_windows(prep.aligned, [e.grid_lead], W)
        cells[key] = (predict_probability(chk, x) if len(y) else np.empty(0), y, lt)
    table, empty = metrics.accuracy_grid(cells, e.grid_lead)
    skipped += [{"scenario": f"{m:g}Sv_{r:g}yr", "reason": "no windows"} for m, r in empty]
    _write_csv(run.path("fig5_grid.csv"),
               ["magnitude", "ramp_years", "tipping_proportion", "n_windows", "accuracy"],
               [[m, r, props[(m, r)], n, acc] for (m, r), (acc, n) in table.items()])
    run.extra["grid_skipped"] = skipped


HANDLERS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "bifurcation": cmd_bifurcation,
            "make-dataset": cmd_make_dataset, "train": cmd_train, "predict": cmd_predict,
            "monitor": cmd_monitor, "lrp": cmd_lrp, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amoctip", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON run config")
        sp.add_argument("--workers", type=int, default=1,
                        help="parallel simulation workers (results do not depend on it)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, config_path, workers: int = 1) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if workers < 1:
        log.error("--workers must be >= 1")
        return EXIT_CONFIG
    r = Run(cfg, command)
    try:
        with threadpool_limits(1):
            status = HANDLERS[command](r, workers)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        r.manifest("failed", str(exc))
        return EXIT_CONFIG
    except (IntegrationError, NumericError) as exc:
        log.error("numeric failure: %s", exc)
        r.manifest("failed", str(exc))
        return EXIT_NUMERIC
    r.manifest("partial" if status == EXIT_PARTIAL else "complete")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return run(args.command, args.config, args.workers)


if __name__ == "__main__":
    sys.exit(main())
