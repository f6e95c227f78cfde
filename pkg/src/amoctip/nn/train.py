"""Plain-SGD training loop with cosine annealing and early stopping."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ConfigError, NumericError
from ..rng import derived_generator
from .network import Checkpoint, Network, NetworkSpec, TIP_CLASS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    batch_size: int = 64
    lr_max: float = 0.01
    lr_min: float = 0.001
    weight_decay: float = 1e-4
    patience: int = 50
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("max_epochs, batch_size and patience must be positive")
        if not 0 < self.lr_min < self.lr_max:
            raise ConfigError("need 0 < lr_min < lr_max")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def sgd_step(weights, grads, lr, weight_decay=0.0):
    """w <- w - lr * (g + weight_decay * w), in place; returns ``weights``."""
    if weights.shape != grads.shape:
        raise ValueError("weight and gradient buffers differ in size")
    weights -= lr * (grads + weight_decay * weights)
    return weights


def cosine_lr(epoch, max_epochs, lr_max=0.01, lr_min=0.001):
    if not 0 <= epoch <= max_epochs:
        raise ValueError("epoch outside [0, max_epochs]")
    return lr_min + (lr_max - lr_min) * (1 + math.cos(math.pi * epoch / max_epochs)) / 2


def _accuracy(net, w, x, y, batch=1024):
    correct = 0
    for s in range(0, len(y), batch):
        z = net.logits(w, x[s:s + batch])
        correct += int(np.sum((z.argmax(axis=1) == TIP_CLASS) == (y[s:s + batch] == TIP_CLASS)))
    return correct / len(y)


def train(train_x, train_y, val_x, val_y, spec: NetworkSpec | None = None,
          config: TrainConfig | None = None, progress=None, sample_keys=None) -> Checkpoint:
    """Train from scratch and return the best-validation checkpoint.

    ``progress`` is called as ``progress(epoch, record)`` after each epoch.
    ``sample_keys`` (one row of integer keys per training window, for example
    realization and lead time) fixes a canonical sample order before the
    seeded shuffle, which makes the result independent of file order.
    """
    spec = spec or NetworkSpec()
    cfg = config or TrainConfig()
    train_x = np.asarray(train_x, dtype=float)
    val_x = np.asarray(val_x, dtype=float)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    if len(train_y) == 0 or len(val_y) == 0:
        raise ConfigError("training and validation partitions must be non-empty")
    if sample_keys is not None:
        keys = np.asarray(sample_keys).reshape(len(train_y), -1)
        canon = np.lexsort(keys.T[::-1])
        train_x, train_y = train_x[canon], train_y[canon]

    mean, std = float(train_x.mean()), float(train_x.std())
    if not std > 0:
        std = 1.0
    xt = (train_x - mean) / std
    xv = (val_x - mean) / std
    net = Network(spec, np.dtype(cfg.precision))
    w = net.init_weights(derived_generator(cfg.seed, "init"))
    best_w, best_acc, best_epoch = w.copy(), -1.0, -1
    history = []
    with threadpool_limits(1):
        for epoch in range(cfg.max_epochs):
            lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr_max, cfg.lr_min)
            order = derived_generator(cfg.seed, "shuffle", epoch).permutation(len(train_y))
            drop = derived_generator(cfg.seed, "dropout", epoch)
            total = 0.0
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                try:
                    loss, grad = net.loss_and_gradients(w, xt[idx], train_y[idx], drop)
                except NumericError as exc:
                    log.error("divergence in epoch %d: %s", epoch, exc)
                    chk = Checkpoint(spec, best_w, mean, std, cfg.seed, history)
                    exc.checkpoint = chk
                    raise
                sgd_step(w, grad, lr, cfg.weight_decay)
                total += loss * len(idx)
            val_acc = _accuracy(net, w, xv, val_y)
            rec = {"epoch": epoch, "lr": lr, "loss": total / len(order), "val_accuracy": val_acc}
            history.append(rec)
            if progress:
                progress(epoch, rec)
            if val_acc > best_acc:
                best_w, best_acc, best_epoch = w.copy(), val_acc, epoch
            elif epoch - best_epoch >= cfg.patience:
                log.info("early stop at epoch %d (best %d, acc %.4f)", epoch, best_epoch, best_acc)
                break
    return Checkpoint(spec, best_w, mean, std, cfg.seed, history)
