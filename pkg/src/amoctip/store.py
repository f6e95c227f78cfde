"""On-disk formats for trajectory ensembles and window datasets.

Both binary formats share a 64-byte little-endian header::

    offset  size  field
    0       8     magic (b"AMOCTRJ\\0" or b"AMOCWIN\\0")
    8       4     format version (uint32)
    12      4     reserved (zero)
    16      8     n   records (uint64)
    24      8     length of each series / window in samples (uint64)
    32      8     dt  integration step in years (float64; 0 for datasets)
    40      8     seed (uint64)
    48      16    reserved (zero)

A trajectory file is followed by ``n`` contiguous float64 q-series of
``length`` samples each. A window file is followed by ``n`` packed records of
``length`` float64 values, a uint8 label, a uint32 lead time and a uint32
realization id.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRAJ_MAGIC = b"AMOCTRJ\0"
WIN_MAGIC = b"AMOCWIN\0"
VERSION = 1
HEADER = struct.Struct("<8sII QQdQ 16x")
assert HEADER.size == 64


def _pack_header(magic, n, length, dt, seed) -> bytes:
    return HEADER.pack(magic, VERSION, 0, n, length, float(dt), int(seed))


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, _, n, length, dt, seed = HEADER.unpack(raw)
    if magic not in (TRAJ_MAGIC, WIN_MAGIC):
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    return {"magic": magic, "n": n, "length": length, "dt": dt, "seed": seed}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_array(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class TrajectoryWriter:
    """Preallocated ensemble file; each realization owns one slot.

    Slots are written independently, so concurrent workers need no
    coordination. ``finish`` or ``fail`` writes the JSON manifest.
    """

    def __init__(self, path, n: int, years: int, dt: float, seed: int, meta: dict | None = None):
        self.path = Path(path)
        self.manifest_path = self.path.with_suffix(".json")
        self.meta = dict(meta or {})
        self.n, self.years, self.dt, self.seed = n, years, dt, seed
        with open(self.path, "wb") as fh:
            fh.write(_pack_header(TRAJ_MAGIC, n, years, dt, seed))
            fh.truncate(HEADER.size + 8 * n * years)
        self._mm = np.memmap(self.path, dtype="<f8", mode="r+", offset=HEADER.size,
                             shape=(n, years))

    def write(self, i: int, q: np.ndarray):
        self._mm[i] = q

    def _manifest(self, status, tips, completed):
        payload = dict(self.meta)
        payload.update({
            "status": status,
            "file": self.path.name,
            "n": self.n,
            "years": self.years,
            "dt": self.dt,
            "seed": self.seed,
            "completed": int(len(completed)),
            "tip_times": [int(t) if t >= 0 else None for t in tips],
        })
        if status != "complete":
            payload["completed_indices"] = [int(i) for i in completed]
        self._mm.flush()
        del self._mm
        write_json(self.manifest_path, payload)

    def finish(self, tips: np.ndarray):
        self._manifest("complete", tips, np.arange(self.n))

    def fail(self, completed: np.ndarray, tips: np.ndarray):
        self._manifest("failed", tips, completed)


@dataclass
class StoredEnsemble:
    q: np.ndarray
    tip_times: np.ndarray
    manifest: dict
    path: Path


def read_trajectories(path) -> StoredEnsemble:
    path = Path(path)
    hdr = read_header(path)
    if hdr["magic"] != TRAJ_MAGIC:
        raise ValueError(f"{path} is not a trajectory file")
    q = np.fromfile(path, dtype="<f8", offset=HEADER.size).reshape(hdr["n"], hdr["length"])
    manifest = json.loads(path.with_suffix(".json").read_text())
    tips = np.array([-1 if t is None else t for t in manifest["tip_times"]], dtype=np.int64)
    return StoredEnsemble(q, tips, manifest, path)


def write_summary_csv(path, rows):
    """Rows of (magnitude, ramp_years, n, n_tipped, proportion)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["magnitude", "ramp_years", "n", "n_tipped", "proportion"])
        for m, r, n, k, prop in rows:
            w.writerow([f"{m:.6g}", f"{r:.6g}", n, k, f"{prop:.6f}"])


def window_dtype(length: int) -> np.dtype:
    return np.dtype([("values", "<f8", (length,)), ("label", "u1"),
                     ("lead_time", "<u4"), ("realization", "<u4")])


def write_windows(path, values, labels, leads, realizations, seed: int = 0):
    values = np.asarray(values, dtype=float)
    n, length = values.shape if values.size else (0, values.shape[-1] if values.ndim == 2 else 0)
    rec = np.zeros(n, dtype=window_dtype(length))
    rec["values"] = values
    rec["label"] = labels
    rec["lead_time"] = leads
    rec["realization"] = realizations
    with open(path, "wb") as fh:
        fh.write(_pack_header(WIN_MAGIC, n, length, 0.0, seed))
        fh.write(rec.tobytes())


def read_windows(path) -> np.ndarray:
    hdr = read_header(path)
    if hdr["magic"] != WIN_MAGIC:
        raise ValueError(f"{path} is not a window file")
    rec = np.fromfile(path, dtype=window_dtype(hdr["length"]), offset=HEADER.size)
    if rec.size != hdr["n"]:
        raise ValueError(f"{path}: expected {hdr['n']} records, found {rec.size}")
    return rec
