# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dilated 1-D convolution kernels.

Same contract as numpy_backend: x (B, T, Cin), w (Cout, Cin, K), bias
(Cout,), output (B, T, Cout); `pad_left` zeros conceptually prepended on the
time axis. Here padding is never materialized: taps falling outside [0, T)
are skipped. Each (batch, frame) output row is computed independently with a
fixed summation order, so results are deterministic and prefix-stable.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused real:
    float
    double

name = "compiled"


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] w, real[::1] bias,
                   int dilation, int pad_left):
    cdef Py_ssize_t b = x.shape[0], t = x.shape[1], cin = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t bb, tt, i, ci, co, src
    cdef real xv

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    # (K, Cin, Cout) copy so the inner loop writes contiguously over Cout
    wt_arr = np.ascontiguousarray(np.transpose(np.asarray(w), (2, 1, 0)))
    cdef real[:, :, ::1] wt = wt_arr
    y_arr = np.empty((b, t, cout), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[::1] acc = np.empty(cout, dtype=dtype)

    for bb in range(b):
        for tt in range(t):
            for co in range(cout):
                acc[co] = bias[co]
            for i in range(k):
                src = tt + i * dilation - pad_left
                if src < 0 or src >= t:
                    continue
                for ci in range(cin):
                    xv = x[bb, src, ci]
                    for co in range(cout):
                        acc[co] += xv * wt[i, ci, co]
            for co in range(cout):
                y[bb, tt, co] = acc[co]
    return y_arr


def conv1d_backward(real[:, :, ::1] x, real[:, :, ::1] w, real[:, :, ::1] gy,
                    int dilation, int pad_left):
    cdef Py_ssize_t b = x.shape[0], t = x.shape[1], cin = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t bb, tt, i, ci, co, src
    cdef real gv

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    wt_arr = np.ascontiguousarray(np.transpose(np.asarray(w), (2, 1, 0)))
    cdef real[:, :, ::1] wt = wt_arr
    gx_arr = np.zeros((b, t, cin), dtype=dtype)
    gwt_arr = np.zeros((k, cin, cout), dtype=dtype)
    gb_arr = np.zeros(cout, dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gwt = gwt_arr
    cdef real[::1] gb = gb_arr

    for bb in range(b):
        for tt in range(t):
            for co in range(cout):
                gb[co] += gy[bb, tt, co]
            for i in range(k):
                src = tt + i * dilation - pad_left
                if src < 0 or src >= t:
                    continue
                for ci in range(cin):
                    gv = 0
                    for co in range(cout):
                        gv += gy[bb, tt, co] * wt[i, ci, co]
                        gwt[i, ci, co] += gy[bb, tt, co] * x[bb, src, ci]
                    gx[bb, src, ci] += gv
    gw = np.ascontiguousarray(np.transpose(gwt_arr, (2, 1, 0)))
    return gx_arr, gw, gb_arr
