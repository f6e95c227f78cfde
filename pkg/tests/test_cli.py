import csv
import json

import numpy as np
import pytest

from amoctip import store
from amoctip.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_PARTIAL, load_config, main
from amoctip.errors import ConfigError

SMALL = {
    "seeds": {"simulation": 5, "split": 6, "training": 7},
    "output_dir": "out",
    "simulate": {"magnitude": 0.42, "ramp_years": 800, "hold_years": 600, "n": 60},
    "sweep": {"magnitudes": [0.3, 0.65], "ramp_times": [100, 200], "hold_years": 300, "n": 100},
    "bifurcation": {"years_up": 1500, "years_down": 1500},
    "dataset": {"window_length": 40, "n_windows": 3, "stride": 20, "eval_leads": [0, 20, 40]},
    "network": {"input_length": 40, "block1_channels": 4, "block2_channels": 4, "hidden": 8},
    "train": {"max_epochs": 2},
    "monitor": {"max_lead": 50},
    "lrp": {"lead": 40},
    "evaluate": {"leads": [20, 40], "n_resamples": 50, "csd_lead": 40, "indicator_max_lead": 50},
}
PIPELINE = ("simulate", "make-dataset", "train", "predict", "monitor", "lrp", "evaluate")


def write_cfg(folder, **changes):
    cfg = json.loads(json.dumps(SMALL))
    for k, v in changes.items():
        cfg[k] = v
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def file_hashes(folder):
    return {p.name: store.sha256_file(p) for p in sorted(folder.iterdir())}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """The same pipeline run twice, with 1 and 3 simulation workers."""
    dirs = []
    for workers in (1, 3):
        base = tmp_path_factory.mktemp(f"w{workers}")
        cfg = write_cfg(base)
        for cmd in PIPELINE:
            assert main([cmd, str(cfg), "--workers", str(workers)]) == EXIT_OK, cmd
        dirs.append(base / "out")
    return dirs


def test_pipeline_outputs_are_byte_identical(pipeline_runs):
    a, b = (file_hashes(d) for d in pipeline_runs)
    assert a == b
    for name in ("ensemble.traj", "model.bin", "predictions.csv", "metrics.csv",
                 "fig2_indicators.csv", "fig3_ks.csv", "fig4b_accuracy.csv",
                 "monitor_aligned.csv", "relevance.csv", "indicators.csv",
                 "dataset.json"):
        assert name in a


def test_manifests_record_provenance(pipeline_runs):
    out = pipeline_runs[0]
    for cmd in PIPELINE:
        man = json.loads((out / f"manifest-{cmd}.json").read_text())
        assert man["status"] == "complete"
        assert man["seeds"] == SMALL["seeds"]
        assert len(man["config_sha256"]) == 64
        assert {"numpy", "scipy", "numba", "amoctip"} <= set(man["versions"])
        for name, digest in man["outputs"].items():
            assert store.sha256_file(out / name) == digest


def test_dataset_partitions_disjoint(pipeline_runs):
    out = pipeline_runs[0]
    reals = {n: set(store.read_windows(out / f"{n}.win")["realization"].tolist())
             for n in ("train", "val", "test")}
    assert not reals["train"] & reals["val"]
    assert not reals["train"] & reals["test"]
    assert not reals["val"] & reals["test"]
    with open(out / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {int(r["realization"]) for r in rows} <= reals["test"]


def test_monitor_shapes(pipeline_runs):
    out = pipeline_runs[0]
    probs = np.load(out / "monitor.npy")
    years = SMALL["simulate"]["ramp_years"] + SMALL["simulate"]["hold_years"]
    assert probs.shape[1] == years - SMALL["dataset"]["window_length"] + 1
    assert np.all((probs >= 0) & (probs <= 1))


def test_sweep_two_by_two(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["sweep", str(cfg)]) == EXIT_OK
    with open(tmp_path / "out" / "fig1e.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    props = {(float(r["magnitude"]), float(r["ramp_years"])): float(r["proportion"]) for r in rows}
    assert props[(0.3, 100.0)] == 0.0 and props[(0.65, 200.0)] == 1.0


def test_bifurcation_writes_both_branches(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["bifurcation", str(cfg)]) == EXIT_OK
    with open(tmp_path / "out" / "bifurcation.csv") as fh:
        branches = {r["branch"] for r in csv.DictReader(fh)}
    assert branches == {"up", "down"}


@pytest.mark.parametrize("change", [
    {"simulate": {"n": 10, "magnitde": 0.4}},
    {"sweeps": {}},
    {"train": {"seed": 3}},
    {"seeds": {"simulation": 1, "split": 2}},
    {"network": {"input_length": 50}},
    {"params": "missing.json"},
])
def test_config_errors_exit_2(tmp_path, change):
    cfg = write_cfg(tmp_path, **change)
    with pytest.raises(ConfigError):
        load_config(cfg)
    assert main(["simulate", str(cfg)]) == EXIT_CONFIG


def test_missing_inputs_exit_2(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["evaluate", str(cfg)]) == EXIT_CONFIG
    man = json.loads((tmp_path / "out" / "manifest-evaluate.json").read_text())
    assert man["status"] == "failed" and "not found" in man["error"]


def blown_params(tmp_path):
    from amoctip.params import default_params
    p = default_params().to_dict()
    p["B"] = [[1e300, 0.0], [0.0, 1e300]]
    path = tmp_path / "bad_params.json"
    path.write_text(json.dumps(p))
    return "bad_params.json"


def test_numeric_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path, params=blown_params(tmp_path))
    assert main(["simulate", str(cfg)]) == EXIT_NUMERIC
    out = tmp_path / "out"
    assert json.loads((out / "manifest-simulate.json").read_text())["status"] == "failed"
    assert json.loads((out / "ensemble.json").read_text())["status"] == "failed"


def test_partial_sweep_exit_4(tmp_path):
    cfg = write_cfg(tmp_path, params=blown_params(tmp_path))
    assert main(["sweep", str(cfg)]) == EXIT_PARTIAL
    man = json.loads((tmp_path / "out" / "manifest-sweep.json").read_text())
    assert man["status"] == "partial"
    assert len(man["failed_cells"]) == 4


def test_output_interfaces(pipeline_runs):
    out = pipeline_runs[0]
    with open(out / "relevance.csv") as fh:
        header = fh.readline().strip()
        n = sum(1 for _ in fh)
    assert header == "realization,lead_time,t,strength,relevance"
    win = store.read_windows(out / "test_eval.win")
    assert n == np.sum(win["lead_time"] == SMALL["lrp"]["lead"]) * SMALL["dataset"]["window_length"]
    with open(out / "indicators.csv") as fh:
        assert fh.readline().strip() == "realization,lead_time,indicator,value"
    side = json.loads((out / "dataset.json").read_text())
    assert side["plan"] == "windows-3-stride-20" and side["split_seed"] == 6


def test_sweep_trajectories_and_grid_accuracy(tmp_path, pipeline_runs):
    import shutil
    cfg = write_cfg(tmp_path, sweep={"magnitudes": [0.38, 0.42], "ramp_times": [200, 800],
                                     "hold_years": 500, "n": 40, "save_trajectories": True},
                    evaluate=dict(SMALL["evaluate"], grid=True, grid_lead=20))
    for name in ("model.bin", "predictions.csv", "test_eval.win", "series.npy", "series.csv"):
        (tmp_path / "out").mkdir(exist_ok=True)
        shutil.copy(pipeline_runs[0] / name, tmp_path / "out" / name)
    assert main(["sweep", str(cfg)]) == EXIT_OK
    assert len(list((tmp_path / "out").glob("sweep_*.traj"))) == 4
    assert main(["evaluate", str(cfg)]) == EXIT_OK
    with open(tmp_path / "out" / "fig5_grid.csv") as fh:
        rows = list(csv.DictReader(fh))
    man = json.loads((tmp_path / "out" / "manifest-evaluate.json").read_text())
    assert len(rows) + len(man["grid_skipped"]) == 4
    for r in rows:
        assert 0.05 <= float(r["tipping_proportion"]) <= 0.95
        assert 0.0 <= float(r["accuracy"]) <= 1.0
