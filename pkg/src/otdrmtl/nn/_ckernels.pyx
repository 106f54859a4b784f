# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline double _tanh(double x) noexcept nogil:
    return 2.0 / (1.0 + exp(-2.0 * x)) - 1.0


cdef void _mm(double* a, double* b, double* c, int m, int k, int n,
              double beta, bint trans_b) noexcept nogil:
    # row-major c[m,n] = a[m,k] @ (b[k,n] or b[n,k].T) + beta * c
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    cdef int ldb
    if trans_b:
        ldb = k
        dgemm(&tt, &tn, &n, &m, &k, &one, b, &ldb, a, &k, &beta, c, &n)
    else:
        ldb = n
        dgemm(&tn, &tn, &n, &m, &k, &one, b, &ldb, a, &k, &beta, c, &n)


def lstm_forward_seq(double[:, :, ::1] xp, double[:, ::1] wh):
    cdef Py_ssize_t T = xp.shape[0], B = xp.shape[1], G = xp.shape[2]
    cdef Py_ssize_t H = G // 4
    hs_a = np.empty((T, B, H))
    cs_a = np.empty((T, B, H))
    tcs_a = np.empty((T, B, H))
    gates_a = np.empty((T, B, G))
    cdef double[:, :, ::1] hs = hs_a, cs = cs_a, tcs = tcs_a, gates = gates_a
    cdef double[:, ::1] whc = np.ascontiguousarray(wh)
    cdef Py_ssize_t t, b, j
    cdef double cp, cn, ig, fg, gg, og
    with nogil:
        for t in range(T):
            # gates[t] = xp[t] + h_{t-1} @ wh
            for b in range(B):
                for j in range(G):
                    gates[t, b, j] = xp[t, b, j]
            if t > 0:
                _mm(&hs[t - 1, 0, 0], &whc[0, 0], &gates[t, 0, 0], <int>B, <int>H, <int>G, 1.0, False)
            for b in range(B):
                for j in range(H):
                    ig = _sig(gates[t, b, j])
                    fg = _sig(gates[t, b, H + j])
                    gg = _tanh(gates[t, b, 2 * H + j])
                    og = _sig(gates[t, b, 3 * H + j])
                    gates[t, b, j] = ig
                    gates[t, b, H + j] = fg
                    gates[t, b, 2 * H + j] = gg
                    gates[t, b, 3 * H + j] = og
                    cp = cs[t - 1, b, j] if t > 0 else 0.0
                    cn = fg * cp + ig * gg
                    cs[t, b, j] = cn
                    tcs[t, b, j] = _tanh(cn)
                    hs[t, b, j] = og * tcs[t, b, j]
    return hs_a, cs_a, tcs_a, gates_a


def lstm_backward_seq(double[:, :, ::1] dhs, double[:, :, ::1] gates, double[:, :, ::1] cs,
                      double[:, :, ::1] tcs, double[:, ::1] wh):
    cdef Py_ssize_t T = gates.shape[0], B = gates.shape[1], G = gates.shape[2]
    cdef Py_ssize_t H = G // 4
    dz_a = np.empty((T, B, G))
    dh_next_a = np.zeros((B, H))
    dc_next_a = np.zeros((B, H))
    cdef double[:, :, ::1] dz = dz_a
    cdef double[:, ::1] dh_next = dh_next_a, dc_next = dc_next_a
    cdef double[:, ::1] whc = np.ascontiguousarray(wh)
    cdef Py_ssize_t t, b, j
    cdef double ig, fg, gg, og, tc, dh, dc, cp
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    ig = gates[t, b, j]
                    fg = gates[t, b, H + j]
                    gg = gates[t, b, 2 * H + j]
                    og = gates[t, b, 3 * H + j]
                    tc = tcs[t, b, j]
                    dh = dhs[t, b, j] + dh_next[b, j]
                    dc = dh * og * (1.0 - tc * tc) + dc_next[b, j]
                    cp = cs[t - 1, b, j] if t > 0 else 0.0
                    dz[t, b, j] = dc * gg * ig * (1.0 - ig)
                    dz[t, b, H + j] = dc * cp * fg * (1.0 - fg)
                    dz[t, b, 2 * H + j] = dc * ig * (1.0 - gg * gg)
                    dz[t, b, 3 * H + j] = dh * tc * og * (1.0 - og)
                    dc_next[b, j] = dc * fg
            if t > 0:
                # dh_next = dz[t] @ wh.T
                _mm(&dz[t, 0, 0], &whc[0, 0], &dh_next[0, 0], <int>B, <int>G, <int>H, 0.0, True)
    return dz_a


def maxpool_forward(double[:, :, ::1] x, int window):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t n = L // window
    y_a = np.empty((B, n, C))
    arg_a = np.empty((B, n, C), dtype=np.intp)
    cdef double[:, :, ::1] y = y_a
    cdef Py_ssize_t[:, :, ::1] arg = arg_a
    cdef Py_ssize_t b, i, c, k, best
    cdef double m, v
    with nogil:
        for b in range(B):
            for i in range(n):
                for c in range(C):
                    best = 0
                    m = x[b, i * window, c]
                    for k in range(1, window):
                        v = x[b, i * window + k, c]
                        if v > m:
                            m = v
                            best = k
                    y[b, i, c] = m
                    arg[b, i, c] = best
    return y_a, arg_a


def maxpool_backward(double[:, :, ::1] dy, Py_ssize_t[:, :, ::1] arg, Py_ssize_t length, int window):
    cdef Py_ssize_t B = dy.shape[0], n = dy.shape[1], C = dy.shape[2]
    dx_a = np.zeros((B, length, dy.shape[2]))
    cdef double[:, :, ::1] dx = dx_a
    cdef Py_ssize_t b, i, c
    with nogil:
        for b in range(B):
            for i in range(n):
                for c in range(C):
                    dx[b, i * window + arg[b, i, c], c] = dy[b, i, c]
    return dx_a


cdef inline void _fit(double sy, double suy, double syy, double m, double su, double den,
                      double* icpt, double* slope, double* rms) noexcept nogil:
    cdef double b = (m * suy - su * sy) / den
    cdef double a = (sy - b * su) / m
    cdef double sse = syy - a * sy - b * suy
    if sse < 0.0:
        sse = 0.0
    icpt[0] = a
    slope[0] = b
    rms[0] = sqrt(sse / (m - 2.0))


def lsq_scan(y_in, Py_ssize_t half):
    cdef double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    outs = tuple(np.full(n, np.nan) for _ in range(6))
    if n < 2 * half or half < 3:
        return outs
    cdef double[::1] ll = outs[0], ls = outs[1], lr = outs[2], rl = outs[3], rs = outs[4], rr = outs[5]
    cdef double m = <double>half
    cdef double su = m * (m - 1) / 2.0
    cdef double suu = (m - 1) * m * (2 * m - 1) / 6.0
    cdef double den = m * suu - su * su
    # running sums over both half windows in local abscissa u = j - start
    cdef double ly = 0.0, luy = 0.0, lyy = 0.0, ry = 0.0, ruy = 0.0, ryy = 0.0
    cdef double a, b, r, yo, yi
    cdef Py_ssize_t j, k
    with nogil:
        for j in range(half):
            ly += y[j]
            luy += j * y[j]
            lyy += y[j] * y[j]
            ry += y[half + j]
            ruy += j * y[half + j]
            ryy += y[half + j] * y[half + j]
        k = half
        while True:
            _fit(ly, luy, lyy, m, su, den, &a, &b, &r)
            ll[k] = a + b * m
            ls[k] = b
            lr[k] = r
            _fit(ry, ruy, ryy, m, su, den, &a, &b, &r)
            rl[k] = a
            rs[k] = b
            rr[k] = r
            if k + half >= n:
                break
            yo = y[k - half]
            yi = y[k]
            luy = luy - ly + yo + (m - 1) * yi
            ly = ly - yo + yi
            lyy = lyy - yo * yo + yi * yi
            yo = y[k]
            yi = y[k + half]
            ruy = ruy - ry + yo + (m - 1) * yi
            ry = ry - yo + yi
            ryy = ryy - yo * yo + yi * yi
            k += 1
    return outs
