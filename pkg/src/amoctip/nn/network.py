"""The fixed two-block CNN, its flat weight buffer, checkpoints and inference.

Checkpoint byte layout (all little-endian)::

    offset  size  field
    0       8     magic b"AMOCCNN\\0"
    8       8     header length H in bytes (uint64)
    16      H     UTF-8 JSON header
    16+H    8*P   float64 weight buffer, P = header["n_params"]

The JSON header carries the network spec, the parameter table (layer, name,
shape, offset) describing how the buffer maps to layer tensors, input
normalization statistics, the seed and the training log. Tensors are stored
C-order: convolution weights as (out, in, kh, kw), dense weights as
(out, in). The dense layer after flattening sees features in (time, width,
channel) order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .layers import (Conv2D, Dense, Dropout, Flatten, MaxPool, ReLU, ShapeError,
                     cross_entropy, softmax)

MAGIC = b"AMOCCNN\0"
TIP_CLASS = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_length: int = 200
    input_width: int = 1
    block1_channels: int = 32
    block2_channels: int = 64
    block1_kernel: tuple = (3, 1)
    block2_kernel: tuple = (3, 3)
    pool: int = 3
    dropout: float = 0.4
    hidden: int = 128
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "block1_kernel", tuple(self.block1_kernel))
        object.__setattr__(self, "block2_kernel", tuple(self.block2_kernel))

    def to_dict(self):
        d = asdict(self)
        d["block1_kernel"] = list(self.block1_kernel)
        d["block2_kernel"] = list(self.block2_kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown network spec keys: {sorted(unknown)}")
        return cls(**d)


def _same(kernel):
    return tuple(k // 2 for k in kernel)


def build_layers(spec: NetworkSpec) -> list:
    c1, c2 = spec.block1_channels, spec.block2_channels
    layers = [
        Conv2D(1, c1, spec.block1_kernel, _same(spec.block1_kernel), "conv1a"), ReLU(),
        Conv2D(c1, c1, spec.block1_kernel, _same(spec.block1_kernel), "conv1b"), ReLU(),
        MaxPool(spec.pool, "pool1"),
        Conv2D(c1, c2, spec.block2_kernel, _same(spec.block2_kernel), "conv2a"), ReLU(),
        Conv2D(c2, c2, spec.block2_kernel, _same(spec.block2_kernel), "conv2b"), ReLU(),
        MaxPool(spec.pool, "pool2"),
        Dropout(spec.dropout),
        Flatten(),
    ]
    shape = (spec.input_length, spec.input_width, 1)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [Dense(shape[0], spec.hidden, "fc1"), ReLU(),
               Dense(spec.hidden, spec.n_classes, "fc2")]
    return layers


class Network:
    """Layer stack plus a parameter table into one flat float64 buffer."""

    def __init__(self, spec: NetworkSpec, dtype=np.float64):
        self.spec = spec
        # arithmetic precision of forward/backward passes; the weight buffer
        # itself is always float64
        self.dtype = np.dtype(dtype)
        self.layers = build_layers(spec)
        self.table = []
        offset = 0
        for li, layer in enumerate(self.layers):
            for pi, shape in enumerate(layer.param_shapes):
                size = int(np.prod(shape))
                self.table.append({"layer": li, "name": f"{layer.name}.{'wb'[pi]}",
                                   "shape": list(shape), "offset": offset})
                offset += size
        self.n_params = offset

    def views(self, buf: np.ndarray) -> list[list[np.ndarray]]:
        if buf.shape != (self.n_params,):
            raise ShapeError(f"weight buffer has {buf.size} values, network needs {self.n_params}")
        out = [[] for _ in self.layers]
        for e in self.table:
            size = int(np.prod(e["shape"]))
            out[e["layer"]].append(buf[e["offset"]:e["offset"] + size].reshape(e["shape"]))
        return out

    def init_weights(self, rng) -> np.ndarray:
        buf = np.zeros(self.n_params)
        for layer, params in zip(self.layers, self.views(buf)):
            layer.init(rng, params)
        return buf

    def as_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        s = self.spec
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1:] != (s.input_length, s.input_width):
            raise ShapeError(f"input: expected windows of shape ({s.input_length}, {s.input_width}), "
                             f"got {x.shape[1:]}")
        return x[..., None]

    def logits(self, buf, x, train=False, rng=None, keep=False):
        """Forward pass to the logits; with ``keep`` also return per-layer caches/inputs."""
        params = self.views(np.asarray(buf, dtype=self.dtype))
        h = self.as_input(x)
        caches, inputs = [], []
        for layer, p in zip(self.layers, params):
            if keep:
                inputs.append(h)
            h, cache = layer.forward(h, p, train, rng)
            caches.append(cache)
        return (h, caches, inputs) if keep else h

    def loss_and_gradients(self, buf, x, labels, rng=None, train=True):
        z, caches, _ = self.logits(buf, x, train, rng, keep=True)
        loss, g = cross_entropy(z, labels)
        params = self.views(np.asarray(buf, dtype=self.dtype))
        grad = np.zeros_like(buf)
        gviews = self.views(grad)
        for layer, p, cache, gv in zip(self.layers[::-1], params[::-1], caches[::-1], gviews[::-1]):
            g, grads = layer.backward(g, p, cache)
            for dst, src in zip(gv, grads):
                dst[...] = src
        return loss, grad


@dataclass
class Checkpoint:
    spec: NetworkSpec
    weights: np.ndarray
    norm_mean: float
    norm_std: float
    seed: int = 0
    log: list = field(default_factory=list)
    _nets: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if not (np.isfinite(self.norm_mean) and np.isfinite(self.norm_std)) or self.norm_std <= 0:
            raise ValueError("normalization statistics must be finite with std > 0")
        if self.weights.size != self.network.n_params:
            raise ShapeError(f"checkpoint has {self.weights.size} weights, spec needs "
                             f"{self.network.n_params}")

    @property
    def network(self) -> Network:
        return self.network_for(np.float64)

    def network_for(self, dtype) -> Network:
        """Network evaluating in ``dtype`` (float64 or float32)."""
        key = np.dtype(dtype).name
        if key not in self._nets:
            self._nets[key] = Network(self.spec, dtype)
        return self._nets[key]

    def normalize(self, windows):
        return (np.asarray(windows, dtype=float) - self.norm_mean) / self.norm_std

    def header(self) -> dict:
        return {"format": 1, "spec": self.spec.to_dict(), "n_params": self.network.n_params,
                "parameters": self.network.table, "norm_mean": self.norm_mean,
                "norm_std": self.norm_std, "seed": self.seed, "log": self.log}

    def save(self, path):
        head = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(self.weights.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        head = json.loads(raw[16:16 + hlen])
        w = np.frombuffer(raw, dtype="<f8", offset=16 + hlen).astype(float)
        if w.size != head["n_params"]:
            raise ValueError(f"{path}: expected {head['n_params']} weights, found {w.size}")
        return cls(NetworkSpec.from_dict(head["spec"]), w, head["norm_mean"], head["norm_std"],
                   head["seed"], head["log"])


def forward(chk: Checkpoint, batch, training_mode: bool = False, rng=None,
            dtype=np.float64) -> np.ndarray:
    """Class probabilities (n, n_classes) for already normalized windows."""
    z = chk.network_for(dtype).logits(chk.weights, batch, training_mode, rng)
    return softmax(z.astype(np.float64))


def loss_and_gradients(chk: Checkpoint, batch, labels, rng=None):
    return chk.network.loss_and_gradients(chk.weights, batch, labels, rng)


def predict_probability(chk: Checkpoint, windows, batch_size: int = 512,
                        dtype=np.float64) -> np.ndarray:
    """Tipping probability of raw windows (normalized internally).

    ``dtype=np.float32`` roughly halves inference time at ~1e-6 accuracy.
    """
    w = np.asarray(windows, dtype=float)
    single = w.ndim == 1
    if single:
        w = w[None]
    if w.shape[1] != chk.spec.input_length:
        raise ShapeError(f"window length {w.shape[1]} does not match the network input "
                         f"length {chk.spec.input_length}")
    out = np.empty(w.shape[0])
    for s in range(0, w.shape[0], batch_size):
        out[s:s + batch_size] = forward(chk, chk.normalize(w[s:s + batch_size]),
                                        dtype=dtype)[:, TIP_CLASS]
    return float(out[0]) if single else out


def monitor(chk: Checkpoint, trajectory, window_length: int | None = None,
            dtype=np.float64) -> np.ndarray:
    """Tipping probability at every rolling window end (same geometry as the
    rolling CSD indicators); empty for series shorter than one window."""
    L = window_length or chk.spec.input_length
    x = np.asarray(trajectory, dtype=float)
    if x.size < L:
        return np.empty(0)
    return predict_probability(chk, sliding_window_view(x, L), dtype=dtype)
