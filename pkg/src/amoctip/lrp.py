"""Layer-wise relevance propagation (epsilon rule) through the CNN.

For a linear map z_k = sum_j x_j w_jk (+ b_k) relevance flows back as

    R_j = x_j * sum_k w_jk * R_k / (z_k + eps * sign(z_k)),

where z_k excludes the bias, so bias relevance is shared among the inputs
rather than absorbed. sign(0) counts as +1 and epsilon is ``eps_scale``
times the mean |z_k| of the layer for that window. ReLU and dropout
(inference) pass relevance unchanged, max-pooling routes it to the winning
input.
Relevance is attributed to the network input, that is the normalized window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import Conv2D, Dense, MaxPool
from .nn.network import TIP_CLASS, Checkpoint


class UntrainedModelError(ValueError):
    """Attribution through an all-zero network is meaningless."""


@dataclass
class RelevanceMap:
    values: np.ndarray      # (window_length,) or (n, window_length)
    target: int
    logit: np.ndarray | float

    @property
    def total(self):
        return self.values.sum(axis=-1)


def _eps_divide(z, R, eps_scale):
    # epsilon is scaled per window so batching does not change the result
    axes = tuple(range(1, z.ndim))
    eps = eps_scale * np.mean(np.abs(z), axis=axes, keepdims=True)
    den = z + eps * np.where(z >= 0, 1.0, -1.0)
    # an all-zero pre-activation carries no relevance
    return np.divide(R, den, out=np.zeros(np.broadcast_shapes(R.shape, den.shape)), where=den != 0)


def relevance(chk: Checkpoint, windows, target: int = TIP_CLASS, eps_scale: float = 1e-6,
              normalized: bool = False) -> RelevanceMap:
    """Relevance of every input sample for the ``target`` logit.

    ``windows`` are raw unless ``normalized`` is set. Accepts one window or a
    batch.
    """
    if not np.any(chk.weights):
        raise UntrainedModelError("checkpoint weights are all zero; relevance would be meaningless")
    x = np.asarray(windows, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None]
    if not normalized:
        x = chk.normalize(x)
    net = chk.network
    z, caches, inputs = net.logits(chk.weights, x, train=False, keep=True)
    params = net.views(chk.weights)
    R = np.zeros_like(z)
    R[:, target] = z[:, target]
    for layer, p, cache, a in zip(net.layers[::-1], params[::-1], caches[::-1], inputs[::-1]):
        if isinstance(layer, (Dense, Conv2D)):
            zero_bias = [p[0], np.zeros_like(p[1])]
            zk, _ = layer.forward(a, zero_bias)
            s = _eps_divide(zk, R, eps_scale)
            c, _ = layer.backward(s, zero_bias, cache)
            R = a * c
        elif isinstance(layer, MaxPool):
            R, _ = layer.backward(R, p, cache)
        else:
            # ReLU, inference-mode dropout and flatten: relevance passes through
            R = R.reshape(a.shape)
    R = R.reshape(x.shape[0], -1)
    logit = z[:, target]
    if single:
        return RelevanceMap(R[0], target, float(logit[0]))
    return RelevanceMap(R, target, logit)


def attention_score(rmap: RelevanceMap, strength) -> np.ndarray:
    """Rows of (t, strength, relevance) pairing each sample with its relevance."""
    r = np.asarray(rmap.values)
    s = np.asarray(strength, dtype=float)
    if r.ndim != 1 or s.shape != r.shape:
        raise ValueError("attention_score expects one relevance map and its window")
    return np.column_stack([np.arange(r.size), s, r])
