"""Dilated 1-D convolution kernels on numpy, one BLAS GEMM per call.

The padded input is gathered into an im2col matrix (B*T, K*Cin) so the whole
convolution is a single GEMM against the reshaped weight. Each output row
depends only on its own gathered taps and GEMM rows are computed
independently, which keeps causal-prefix guarantees exact on this backend
(covered by tests).

Shared layout for both backends: input (B, T, Cin) row-major, weight
(Cout, Cin, K), bias (Cout,), output (B, T, Cout). `pad_left` zeros are
prepended on the time axis and (K-1)*dilation - pad_left appended, so output
length always equals input length.
"""

import numpy as np

name = "numpy"


def _gather(x, dilation, pad_left, k):
    b, t, cin = x.shape
    total = (k - 1) * dilation
    xpad = np.zeros((b, t + total, cin), dtype=x.dtype)
    xpad[:, pad_left:pad_left + t] = x
    taps = np.arange(t)[:, None] + np.arange(k)[None, :] * dilation  # (T, K)
    return xpad, xpad[:, taps, :]  # (B, T, K, Cin), contiguous copy


def conv1d_forward(x, w, bias, dilation, pad_left):
    b, t, cin = x.shape
    cout, _, k = w.shape
    _, xcol = _gather(x, dilation, pad_left, k)
    wmat = w.transpose(2, 1, 0).reshape(k * cin, cout)
    y = xcol.reshape(b * t, k * cin) @ wmat + bias
    return y.reshape(b, t, cout)


def conv1d_backward(x, w, gy, dilation, pad_left):
    b, t, cin = x.shape
    cout, _, k = w.shape
    _, xcol = _gather(x, dilation, pad_left, k)
    wmat = w.transpose(2, 1, 0).reshape(k * cin, cout)
    g2 = gy.reshape(b * t, cout)

    gb = g2.sum(axis=0)
    gw = (xcol.reshape(b * t, k * cin).T @ g2).reshape(k, cin, cout)
    gw = np.ascontiguousarray(gw.transpose(2, 1, 0))

    gcol = (g2 @ wmat.T).reshape(b, t, k, cin)
    total = (k - 1) * dilation
    gxpad = np.zeros((b, t + total, cin), dtype=x.dtype)
    for i in range(k):
        lo = i * dilation
        gxpad[:, lo:lo + t] += gcol[:, :, i]
    gx = np.ascontiguousarray(gxpad[:, pad_left:pad_left + t])
    return gx, gw, gb
