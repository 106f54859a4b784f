"""Layers with explicit forward/backward pairs.

Tensors are float64 numpy arrays. Sequence inputs are batch-major,
``[batch, length, channels]``. Each op exists as a pair of pure functions
(``*_forward`` / ``*_backward``) and as a stateful layer object that caches
what its backward pass needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, NumericError, ShapeError
from ._backend import kernels


def _shape_error(what: str, a, b) -> ShapeError:
    return ShapeError(f"{what}: shapes {tuple(a)} and {tuple(b)} do not agree")


def _check_finite(y: np.ndarray, name: str) -> None:
    if not np.isfinite(y).all():
        raise NumericError(f"non-finite activations in layer {name!r}")


# ---------------------------------------------------------------- dense


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``y = x W^T + b`` with ``W`` shaped ``[out, in]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise _shape_error("dense input vs weight", x.shape, w.shape)
    if b.shape != (w.shape[0],):
        raise _shape_error("dense bias vs weight", b.shape, w.shape)
    return x @ w.T + b


def dense_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns ``(dx, dw, db)``."""
    return dy @ w, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------- conv1d


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation along axis 1. ``w`` is ``[filters, in_ch, k]``."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise _shape_error("conv1d input vs kernel", x.shape, w.shape)
    k = w.shape[2]
    if k > x.shape[1]:
        raise _shape_error("conv1d kernel longer than input", w.shape, x.shape)
    B, L, C = x.shape
    Lo = L - k + 1
    cols = sliding_window_view(x, k, axis=1)  # [B, Lo, C, k]
    y = cols.reshape(B * Lo, C * k) @ w.reshape(w.shape[0], C * k).T + b
    return y.reshape(B, Lo, w.shape[0])


def conv1d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    F, C, k = w.shape
    B, L, _ = x.shape
    Lo = L - k + 1
    dy2 = dy.reshape(B * Lo, F)
    cols = sliding_window_view(x, k, axis=1).reshape(B * Lo, C * k)
    dw = (dy2.T @ cols).reshape(F, C, k)
    db = dy2.sum(axis=0)
    dx = np.zeros_like(x)
    for j in range(k):
        dx[:, j : j + Lo, :] += dy @ w[:, :, j]
    return dx, dw, db


# ---------------------------------------------------------------- pooling


def maxpool1d_forward(x: np.ndarray, window: int = 2):
    """Returns ``(y, argmax)``; ties go to the first index, a ragged tail is dropped."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool expects [batch, len, ch], got {x.shape}")
    if x.shape[1] < window:
        raise _shape_error("maxpool window longer than input", (window,), x.shape)
    return kernels.maxpool_forward(np.ascontiguousarray(x), int(window))


def maxpool1d_backward(dy: np.ndarray, arg: np.ndarray, length: int, window: int = 2) -> np.ndarray:
    return kernels.maxpool_backward(np.ascontiguousarray(dy), arg, int(length), int(window))


# ---------------------------------------------------------------- dropout


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("train-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------- lstm


@dataclass
class LstmCache:
    x: np.ndarray
    hs: np.ndarray
    cs: np.ndarray
    tcs: np.ndarray
    gates: np.ndarray
    reverse: bool


def lstm_forward(x: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray, reverse: bool = False):
    """Full-sequence LSTM with zero initial state.

    ``wx`` is ``[in, 4H]``, ``wh`` is ``[H, 4H]``, ``b`` is ``[4H]``; gate blocks
    are ordered input, forget, candidate, output. With ``reverse`` the
    sequence is consumed back to front and the outputs are re-aligned to
    the input time axis. Returns ``(h [B, T, H], cache)``.
    """
    if x.ndim != 3 or x.shape[2] != wx.shape[0]:
        raise _shape_error("lstm input vs input weights", x.shape, wx.shape)
    G = wx.shape[1]
    if G % 4 or wh.shape != (G // 4, G) or b.shape != (G,):
        raise ShapeError(f"inconsistent LSTM parameter shapes {wx.shape}, {wh.shape}, {b.shape}")
    xs = x[:, ::-1] if reverse else x
    xp = np.ascontiguousarray((xs @ wx + b).transpose(1, 0, 2))
    hs, cs, tcs, gates = kernels.lstm_forward_seq(xp, np.ascontiguousarray(wh))
    bad = ~np.isfinite(hs).reshape(hs.shape[0], -1).all(axis=1)
    if bad.any():
        t = int(np.argmax(bad))
        raise NumericError(f"non-finite LSTM state at step {t}")
    h = hs.transpose(1, 0, 2)
    if reverse:
        h = h[:, ::-1]
    return np.ascontiguousarray(h), LstmCache(xs, hs, cs, tcs, gates, reverse)


def lstm_backward(dh: np.ndarray, cache: LstmCache, wx: np.ndarray, wh: np.ndarray):
    """Exact BPTT. Returns ``(dx, dwx, dwh, db)``."""
    if cache.reverse:
        dh = dh[:, ::-1]
    dhs = np.ascontiguousarray(dh.transpose(1, 0, 2))
    dz = kernels.lstm_backward_seq(dhs, cache.gates, cache.cs, cache.tcs, np.ascontiguousarray(wh))
    T, B, G = dz.shape
    H = G // 4
    dz2 = dz.reshape(T * B, G)
    hprev = np.concatenate([np.zeros((1, B, H)), cache.hs[:-1]]).reshape(T * B, H)
    dwh = hprev.T @ dz2
    xs_t = cache.x.transpose(1, 0, 2).reshape(T * B, -1)
    dwx = xs_t.T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz2 @ wx.T).reshape(T, B, -1).transpose(1, 0, 2)
    if cache.reverse:
        dx = dx[:, ::-1]
    return np.ascontiguousarray(dx), dwx, dwh, db


# ---------------------------------------------------------------- layer objects


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Layer:
    """Base class. Subclasses set ``params`` and implement forward/backward."""

    kind = "layer"

    def __init__(self, name: str) -> None:
        self.name = name
        self.params: list[Param] = []

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
        super().__init__(name)
        if n_in < 1 or n_out < 1:
            raise ConfigError(f"dense sizes must be positive, got {n_in}->{n_out}")
        self.n_in, self.n_out = n_in, n_out
        self.w = Param(f"{name}.weight", glorot_uniform(rng, (n_out, n_in), n_in, n_out))
        self.b = Param(f"{name}.bias", np.zeros(n_out))
        self.params = [self.w, self.b]

    def forward(self, x, train=False, rng=None):
        self._x = x
        y = dense_forward(x, self.w.value, self.b.value)
        _check_finite(y, self.name)
        return y

    def backward(self, dy):
        dx, dw, db = dense_backward(dy, self._x, self.w.value)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def config(self):
        return {**super().config(), "in": self.n_in, "out": self.n_out}

    def output_shape(self, shape):
        return (shape[0], self.n_out)


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, name: str, in_ch: int, filters: int, kernel: int, rng: np.random.Generator) -> None:
        super().__init__(name)
        if min(in_ch, filters, kernel) < 1:
            raise ConfigError("conv1d sizes must be positive")
        self.in_ch, self.filters, self.kernel = in_ch, filters, kernel
        w = glorot_uniform(rng, (filters, in_ch, kernel), in_ch * kernel, filters * kernel)
        self.w = Param(f"{name}.kernel", w)
        self.b = Param(f"{name}.bias", np.zeros(filters))
        self.params = [self.w, self.b]

    def forward(self, x, train=False, rng=None):
        self._x = x
        y = conv1d_forward(x, self.w.value, self.b.value)
        _check_finite(y, self.name)
        return y

    def backward(self, dy):
        dx, dw, db = conv1d_backward(dy, self._x, self.w.value)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def config(self):
        return {**super().config(), "in": self.in_ch, "filters": self.filters, "kernel": self.kernel}

    def output_shape(self, shape):
        if shape[1] < self.kernel:
            raise _shape_error("conv1d kernel longer than input", (self.kernel,), shape)
        return (shape[0], shape[1] - self.kernel + 1, self.filters)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool1D(Layer):
    kind = "maxpool1d"

    def __init__(self, name: str, window: int = 2) -> None:
        super().__init__(name)
        if window < 1:
            raise ConfigError("pool window must be positive")
        self.window = window

    def forward(self, x, train=False, rng=None):
        self._len = x.shape[1]
        y, self._arg = maxpool1d_forward(x, self.window)
        return y

    def backward(self, dy):
        return maxpool1d_backward(dy, self._arg, self._len, self.window)

    def config(self):
        return {**super().config(), "window": self.window}

    def output_shape(self, shape):
        if shape[1] < self.window:
            raise _shape_error("maxpool window longer than input", (self.window,), shape)
        return (shape[0], shape[1] // self.window, *shape[2:])


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name: str, rate: float) -> None:
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        y, self._mask = dropout_forward(x, self.rate, train, rng)
        return y

    def backward(self, dy):
        return dropout_backward(dy, self._mask)

    def config(self):
        return {**super().config(), "rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))


class LSTM(Layer):
    """Unidirectional LSTM returning the full hidden sequence."""

    kind = "lstm"

    def __init__(self, name: str, n_in: int, hidden: int, rng: np.random.Generator, reverse: bool = False) -> None:
        super().__init__(name)
        if n_in < 1 or hidden < 1:
            raise ConfigError("LSTM sizes must be positive")
        self.n_in, self.hidden, self.reverse = n_in, hidden, reverse
        G = 4 * hidden
        b = np.zeros(G)
        b[hidden : 2 * hidden] = 1.0  # forget gate
        lim = 1.0 / math.sqrt(hidden)
        self.wx = Param(f"{name}.w_input", glorot_uniform(rng, (n_in, G), n_in, G))
        self.wh = Param(f"{name}.w_recurrent", rng.uniform(-lim, lim, size=(hidden, G)))
        self.b = Param(f"{name}.bias", b)
        self.params = [self.wx, self.wh, self.b]

    def forward(self, x, train=False, rng=None):
        h, self._cache = lstm_forward(x, self.wx.value, self.wh.value, self.b.value, self.reverse)
        return h

    def backward(self, dy):
        dx, dwx, dwh, db = lstm_backward(dy, self._cache, self.wx.value, self.wh.value)
        self.wx.grad += dwx
        self.wh.grad += dwh
        self.b.grad += db
        return dx

    def config(self):
        return {**super().config(), "in": self.n_in, "hidden": self.hidden, "reverse": self.reverse}

    def output_shape(self, shape):
        return (shape[0], shape[1], self.hidden)


class BiLSTM(Layer):
    """Forward and time-reversed LSTMs, concatenated on the feature axis."""

    kind = "bilstm"

    def __init__(self, name: str, n_in: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__(name)
        self.n_in, self.hidden = n_in, hidden
        self.fwd = LSTM(f"{name}.fwd", n_in, hidden, rng)
        self.bwd = LSTM(f"{name}.bwd", n_in, hidden, rng, reverse=True)
        self.params = self.fwd.params + self.bwd.params

    def forward(self, x, train=False, rng=None):
        return np.concatenate([self.fwd.forward(x), self.bwd.forward(x)], axis=2)

    def backward(self, dy):
        H = self.hidden
        return self.fwd.backward(np.ascontiguousarray(dy[:, :, :H])) + self.bwd.backward(
            np.ascontiguousarray(dy[:, :, H:])
        )

    def config(self):
        return {**super().config(), "in": self.n_in, "hidden": self.hidden}

    def output_shape(self, shape):
        return (shape[0], shape[1], 2 * self.hidden)


def bilstm_forward(x: np.ndarray, p_fwd: tuple, p_bwd: tuple):
    """Functional BiLSTM over ``(wx, wh, b)`` tuples; returns ``(y, (cache_f, cache_b))``."""
    if tuple(np.shape(a) for a in p_fwd) != tuple(np.shape(a) for a in p_bwd):
        raise _shape_error("BiLSTM direction parameters", [np.shape(a) for a in p_fwd], [np.shape(a) for a in p_bwd])
    hf, cf = lstm_forward(x, *p_fwd, reverse=False)
    hb, cb = lstm_forward(x, *p_bwd, reverse=True)
    return np.concatenate([hf, hb], axis=2), (cf, cb)


def bilstm_backward(dy: np.ndarray, caches, p_fwd: tuple, p_bwd: tuple):
    """Returns ``(dx, grads_fwd, grads_bwd)`` with each grads tuple ``(dwx, dwh, db)``."""
    H = p_fwd[1].shape[0]
    dxf, *gf = lstm_backward(np.ascontiguousarray(dy[:, :, :H]), caches[0], p_fwd[0], p_fwd[1])
    dxb, *gb = lstm_backward(np.ascontiguousarray(dy[:, :, H:]), caches[1], p_bwd[0], p_bwd[1])
    return dxf + dxb, tuple(gf), tuple(gb)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, name: str, layers: list[Layer]) -> None:
        super().__init__(name)
        self.layers = layers
        self.params = [p for layer in layers for p in layer.params]

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def config(self):
        return {**super().config(), "layers": [layer.config() for layer in self.layers]}

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape
