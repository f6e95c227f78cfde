"""Layer primitives on channels-last arrays of shape (batch, height, width, channels).

Every layer exposes ``param_shapes`` and a ``forward``/``backward`` pair.
``forward`` returns the output and an opaque cache; ``backward`` takes the
upstream gradient and the cache and returns the input gradient plus one
gradient array per parameter.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericError


class ShapeError(ValueError):
    """Input shape does not match what a layer expects."""


class Layer:
    name = "layer"
    param_shapes: tuple = ()

    def output_shape(self, shape):
        return shape

    def init(self, rng, params):
        pass

    def forward(self, x, params, train=False, rng=None):
        raise NotImplementedError

    def backward(self, g, params, cache):
        raise NotImplementedError


class Conv2D(Layer):
    """Stride-1 convolution with zero padding and bias.

    Weights are stored as (out_channels, in_channels, kh, kw). Kernel offsets
    whose receptive field lies entirely in the padding are skipped; they
    contribute nothing to the output and receive zero gradient.
    """

    def __init__(self, in_ch, out_ch, kernel, padding, name="conv"):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.padding = tuple(kernel), tuple(padding)
        self.name = name
        kh, kw = self.kernel
        self.param_shapes = ((out_ch, in_ch, kh, kw), (out_ch,))

    def output_shape(self, shape):
        h, w, c = shape
        if c != self.in_ch:
            raise ShapeError(f"{self.name}: expected {self.in_ch} channels, got {c}")
        kh, kw = self.kernel
        ph, pw = self.padding
        ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: input {shape} too small for kernel {self.kernel}")
        return ho, wo, self.out_ch

    def init(self, rng, params):
        w, b = params
        fan_in = self.in_ch * self.kernel[0] * self.kernel[1]
        lim = np.sqrt(6.0 / fan_in)
        w[...] = rng.uniform(-lim, lim, w.shape)
        b[...] = 0.0

    def offsets(self, h, w):
        kh, kw = self.kernel
        ph, pw = self.padding
        ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
        live = []
        for i in range(kh):
            if min(ho - 1 + i - ph, h - 1) < max(i - ph, 0):
                continue
            for j in range(kw):
                if min(wo - 1 + j - pw, w - 1) < max(j - pw, 0):
                    continue
                live.append((i, j))
        return live, ho, wo

    def _columns(self, x):
        n, h, w, c = x.shape
        ph, pw = self.padding
        live, ho, wo = self.offsets(h, w)
        if ph or pw:
            xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
            xp[:, ph:ph + h, pw:pw + w, :] = x
        else:
            xp = x
        cols = np.empty((n * ho * wo, len(live) * c), dtype=x.dtype)
        for k, (i, j) in enumerate(live):
            cols[:, k * c:(k + 1) * c] = xp[:, i:i + ho, j:j + wo, :].reshape(-1, c)
        return cols, live, ho, wo

    def weight_matrix(self, wt, live):
        # rows ordered (offset, in_channel) to match the column layout
        return np.concatenate([wt[:, :, i, j].T for i, j in live], axis=0)

    def forward(self, x, params, train=False, rng=None):
        if x.ndim != 4 or x.shape[-1] != self.in_ch:
            raise ShapeError(f"{self.name}: expected (n, h, w, {self.in_ch}), got {x.shape}")
        wt, b = params
        cols, live, ho, wo = self._columns(x)
        wm = self.weight_matrix(wt, live)
        y = (cols @ wm + b).reshape(x.shape[0], ho, wo, self.out_ch)
        return y, (x.shape, cols, live, wm)

    def backward(self, g, params, cache):
        xshape, cols, live, wm = cache
        n, h, w, c = xshape
        ph, pw = self.padding
        g2 = g.reshape(-1, self.out_ch)
        dwm = cols.T @ g2
        dw = np.zeros(self.param_shapes[0], dtype=g.dtype)
        for k, (i, j) in enumerate(live):
            dw[:, :, i, j] = dwm[k * c:(k + 1) * c].T
        db = g2.sum(axis=0)
        ho, wo = g.shape[1:3]
        dcols = (g2 @ wm.T).reshape(n, ho, wo, -1)
        dxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=g.dtype)
        for k, (i, j) in enumerate(live):
            dxp[:, i:i + ho, j:j + wo, :] += dcols[..., k * c:(k + 1) * c]
        dx = dxp[:, ph:ph + h, pw:pw + w, :]
        return dx, [dw, db]


class ReLU(Layer):
    name = "relu"

    def forward(self, x, params, train=False, rng=None):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, g, params, cache):
        return np.where(cache, g, 0.0), []


class MaxPool(Layer):
    """Non-overlapping max pooling along height; trailing rows that do not
    fill a pool are dropped. Ties go to the earliest index."""

    def __init__(self, size, name="pool"):
        self.size = int(size)
        self.name = name

    def output_shape(self, shape):
        h, w, c = shape
        if h // self.size < 1:
            raise ShapeError(f"{self.name}: height {h} smaller than pool {self.size}")
        return h // self.size, w, c

    def forward(self, x, params, train=False, rng=None):
        n, h, w, c = x.shape
        ho = h // self.size
        if ho < 1:
            raise ShapeError(f"{self.name}: height {h} smaller than pool {self.size}")
        end = ho * self.size
        y = x[:, 0:end:self.size].copy()
        arg = np.zeros(y.shape, dtype=np.int8)
        for k in range(1, self.size):
            cand = x[:, k:end:self.size]
            better = cand > y  # strict: ties stay with the earlier index
            y = np.where(better, cand, y)
            arg[better] = k
        return y, (x.shape, arg)

    def backward(self, g, params, cache):
        xshape, arg = cache
        end = arg.shape[1] * self.size
        dx = np.zeros(xshape, dtype=g.dtype)
        for k in range(self.size):
            dx[:, k:end:self.size] = np.where(arg == k, g, 0.0)
        return dx, []


class Dropout(Layer):
    """Inverted dropout: active only in training mode, scaled by 1/(1-rate)."""

    def __init__(self, rate, name="dropout"):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)
        self.name = name

    def forward(self, x, params, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        mask = ((rng.random(x.shape) >= self.rate) / (1.0 - self.rate)).astype(x.dtype)
        return x * mask, mask

    def backward(self, g, params, cache):
        return (g if cache is None else g * cache), []


class Flatten(Layer):
    """Row-major flatten of (height, width, channels)."""

    name = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, params, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, params, cache):
        return g.reshape(cache), []


class Dense(Layer):
    """Fully connected layer; weights stored as (out_features, in_features)."""

    def __init__(self, n_in, n_out, name="dense"):
        self.n_in, self.n_out = n_in, n_out
        self.name = name
        self.param_shapes = ((n_out, n_in), (n_out,))

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ShapeError(f"{self.name}: expected ({self.n_in},), got {shape}")
        return (self.n_out,)

    def init(self, rng, params):
        w, b = params
        lim = np.sqrt(6.0 / self.n_in)
        w[...] = rng.uniform(-lim, lim, w.shape)
        b[...] = 0.0

    def forward(self, x, params, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.name}: expected (n, {self.n_in}), got {x.shape}")
        w, b = params
        return x @ w.T + b, x

    def backward(self, g, params, cache):
        w, _ = params
        return g @ w, [g.T @ cache, g.sum(axis=0)]


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any((labels < 0) | (labels >= logits.shape[1])):
        raise ValueError("labels out of range")
    lp = log_softmax(logits)
    n = logits.shape[0]
    loss = -lp[np.arange(n), labels].mean()
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss on a batch of {n}; logit range "
                           f"[{np.nanmin(logits):.3g}, {np.nanmax(logits):.3g}]")
    g = np.exp(lp)
    g[np.arange(n), labels] -= 1.0
    return float(loss), g / n
