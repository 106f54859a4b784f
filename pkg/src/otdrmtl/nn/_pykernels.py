"""Reference numpy kernels. ``_ckernels`` implements the same functions.

Sequence tensors are time-major, ``[T, B, features]``. LSTM gate blocks are
ordered input, forget, candidate, output.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward_seq(xp: np.ndarray, wh: np.ndarray):
    """Run the recurrence over precomputed input projections ``xp = x @ Wx + b``.

    Returns hidden states, cell states, tanh of cell states and the
    activated gates, all time-major.
    """
    T, B, G = xp.shape
    H = G // 4
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    tcs = np.empty((T, B, H))
    gates = np.empty((T, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xp[t] + h @ wh
        a = gates[t]
        a[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        a[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H :] * tc
        hs[t], cs[t], tcs[t] = h, c, tc
    return hs, cs, tcs, gates


def lstm_backward_seq(dhs, gates, cs, tcs, wh):
    """Backpropagate through time; returns gradients of the gate pre-activations."""
    T, B, G = gates.shape
    H = G // 4
    dz = np.empty((T, B, G))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        dh = dhs[t] + dh_next
        tc = tcs[t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        c_prev = cs[t - 1] if t else 0.0
        d = dz[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        d[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ wh.T
    return dz


def maxpool_forward(x: np.ndarray, window: int):
    """Non-overlapping max pooling over axis 1; ties resolve to the first index."""
    B, L, C = x.shape
    n = L // window
    view = x[:, : n * window].reshape(B, n, window, C)
    arg = np.argmax(view, axis=2)
    y = np.take_along_axis(view, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return y, arg


def maxpool_backward(dy: np.ndarray, arg: np.ndarray, length: int, window: int) -> np.ndarray:
    B, n, C = dy.shape
    dx = np.zeros((B, length, C))
    view = dx[:, : n * window].reshape(B, n, window, C)
    np.put_along_axis(view, arg[:, :, None, :], dy[:, :, None, :], axis=2)
    return dx


def lsq_scan(y: np.ndarray, half: int):
    """Sliding least-squares line fits on both sides of every centre ``k``.

    The left fit uses ``y[k-half:k]`` and the right fit ``y[k:k+half]``.
    Returns ``(left_level, left_slope, left_rms, right_level, right_slope,
    right_rms)``: both levels are evaluated at ``k`` and ``*_rms`` is the
    residual RMS of each fit. Centres without full support are NaN.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    out = tuple(np.full(n, np.nan) for _ in range(6))
    if n < 2 * half or half < 3:
        return out
    idx = np.arange(n, dtype=np.float64)
    s0 = np.concatenate([[0.0], np.cumsum(y)])
    s1 = np.concatenate([[0.0], np.cumsum(idx * y)])
    s2 = np.concatenate([[0.0], np.cumsum(y * y)])
    m = float(half)
    su = m * (m - 1) / 2.0
    suu = (m - 1) * m * (2 * m - 1) / 6.0
    den = m * suu - su * su
    ks = np.arange(half, n - half + 1)

    def fit(start):
        sy = s0[start + half] - s0[start]
        suy = s1[start + half] - s1[start] - start * sy
        syy = s2[start + half] - s2[start]
        slope = (m * suy - su * sy) / den
        icpt = (sy - slope * su) / m
        sse = np.maximum(syy - icpt * sy - slope * suy, 0.0)
        return icpt, slope, np.sqrt(sse / (m - 2))

    icpt, slope, rms = fit(ks - half)
    out[0][ks], out[1][ks], out[2][ks] = icpt + slope * m, slope, rms
    icpt, slope, rms = fit(ks)
    out[3][ks], out[4][ks], out[5][ks] = icpt, slope, rms
    return out
