"""Reverse-mode automatic differentiation over dense numpy arrays.

Deliberately minimal: exactly the operations the four temporal classifiers
need, each implemented as one graph node with a hand-written backward pass.
float32 is the production dtype; float64 is used by the gradient checker.
Gradients accumulate in a fixed topological order, so repeated runs on the
same inputs are bit-identical.
"""

import numpy as np

from . import kernels
from .errors import ConfigError, DataError


def assert_finite(arr, what, error_cls=DataError):
    """Raise `error_cls` if `arr` contains NaN or Inf."""
    if not np.isfinite(arr).all():
        raise error_cls(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=dtype)
        elif arr.dtype != np.float64:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        else:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.name = None
        out._parents = tuple(parents)
        out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar through every reachable ancestor."""
        if self.data.ndim != 0:
            raise ConfigError("backward() requires a scalar output")
        order = _topo_order(self)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"


def _topo_order(root):
    # iterative post-order DFS; parent order is insertion order, so the
    # traversal (and with it gradient accumulation order) is deterministic
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _check_same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ConfigError(f"mixed dtypes in op: {dt} vs {t.data.dtype}")
    return dt


def add(a, b):
    if a.shape != b.shape:
        raise ConfigError(f"add shape mismatch: {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    out = Tensor._from_op(a.data + b.data, (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    out._backward = backward
    return out


def scale(a, c):
    c = float(c)
    out = Tensor._from_op(a.data * a.data.dtype.type(c), (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * a.data.dtype.type(c))

    out._backward = backward
    return out


def average(tensors):
    """Mean of equal-shape tensors (used for per-stage loss terms)."""
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(tensors))


def relu(x):
    out = Tensor._from_op(np.maximum(x.data, 0), (x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    out._backward = backward
    return out


def sigmoid(x):
    out = Tensor._from_op(_sigmoid(x.data), (x,))

    def backward(g):
        if x.requires_grad:
            s = out.data
            x._accumulate(g * s * (1 - s))

    out._backward = backward
    return out


def _sigmoid(z):
    # split on sign so exp never overflows
    res = np.empty_like(z)
    pos = z >= 0
    res[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    res[~pos] = e / (1.0 + e)
    return res


def tanh(x):
    out = Tensor._from_op(np.tanh(x.data), (x,))

    def backward(g):
        if x.requires_grad:
            t = out.data
            x._accumulate(g * (1 - t * t))

    out._backward = backward
    return out


def softmax(x):
    if x.data.shape[-1] < 1:
        raise ConfigError("softmax needs last axis length >= 1")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._from_op(s, (x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._backward = backward
    return out


def log_softmax(x):
    if x.data.shape[-1] < 1:
        raise ConfigError("log_softmax needs last axis length >= 1")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor._from_op(ls, (x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g - np.exp(ls) * g.sum(axis=-1, keepdims=True))

    out._backward = backward
    return out


def dense(x, w, b):
    """Affine map on the last axis: y = x @ w.T + b, w is (Dout, Din)."""
    if x.data.shape[-1] != w.data.shape[1] or b.data.shape != (w.data.shape[0],):
        raise ConfigError(
            f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
        )
    _check_same_dtype(x, w, b)
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    y = x2 @ w.data.T + b.data
    out = Tensor._from_op(y.reshape(lead + (w.data.shape[0],)), (x, w, b))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ w.data).reshape(x.data.shape))
        if w.requires_grad:
            w._accumulate(g2.T @ x2)
        if b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    out._backward = backward
    return out


def conv1d_dilated(x, w, b, dilation=1, causal=True):
    """Same-length dilated 1-D convolution over the time axis.

    x is (T, Cin) or (B, T, Cin); w is (Cout, Cin, K); b is (Cout,).
    Causal mode left-pads by (K-1)*dilation so output t sees only inputs
    <= t; acausal mode pads symmetrically and requires the total pad even.
    """
    if w.data.ndim != 3 or b.data.ndim != 1:
        raise ConfigError(f"conv1d weight/bias rank: w {w.shape}, b {b.shape}")
    cout, cin, k = w.data.shape
    if k < 1 or dilation < 1:
        raise ConfigError(f"conv1d needs k >= 1 and dilation >= 1, got {k}, {dilation}")
    if x.data.ndim not in (2, 3) or x.data.shape[-1] != cin or b.data.shape[0] != cout:
        raise ConfigError(
            f"conv1d shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
        )
    _check_same_dtype(x, w, b)
    total_pad = (k - 1) * dilation
    if causal:
        pad_left = total_pad
    else:
        if total_pad % 2 != 0:
            raise ConfigError(
                f"acausal conv1d needs even total pad, got (k-1)*dilation={total_pad}"
            )
        pad_left = total_pad // 2

    squeeze = x.data.ndim == 2
    x3 = x.data[None] if squeeze else x.data
    x3 = np.ascontiguousarray(x3)
    y = kernels.conv1d_forward(x3, w.data, b.data, dilation, pad_left)
    out = Tensor._from_op(y[0] if squeeze else y, (x, w, b))

    def backward(g):
        g3 = np.ascontiguousarray(g[None] if squeeze else g)
        gx, gw, gb = kernels.conv1d_backward(x3, w.data, g3, dilation, pad_left)
        if x.requires_grad:
            x._accumulate(gx[0] if squeeze else gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    out._backward = backward
    return out


def cross_entropy(log_probs, labels):
    """Mean of -log_probs[n, labels[n]] over rows."""
    if log_probs.data.ndim != 2:
        raise ConfigError(f"cross_entropy expects N x C log-probs, got {log_probs.shape}")
    labels = np.asarray(labels)
    n, c = log_probs.data.shape
    if labels.shape != (n,):
        raise DataError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(
            f"label out of range [0, {c}): {labels[(labels < 0) | (labels >= c)][0]}"
        )
    rows = np.arange(n)
    val = -log_probs.data[rows, labels].mean(dtype=log_probs.data.dtype)
    out = Tensor._from_op(np.asarray(val, dtype=log_probs.data.dtype), (log_probs,))

    def backward(g):
        if log_probs.requires_grad:
            glp = np.zeros_like(log_probs.data)
            glp[rows, labels] = -g / log_probs.data.dtype.type(n)
            log_probs._accumulate(glp)

    out._backward = backward
    return out


def concat(tensors, axis=-1):
    _check_same_dtype(*tensors)
    out = Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    out._backward = backward
    return out


def time_pool(x, mode="mean"):
    """Collapse the time axis of (T, F) or (B, T, F) to (F,) / (B, F)."""
    if x.data.ndim not in (2, 3):
        raise ConfigError(f"time_pool expects rank 2 or 3, got {x.shape}")
    axis = x.data.ndim - 2
    t = x.data.shape[axis]
    if mode == "mean":
        out = Tensor._from_op(x.data.mean(axis=axis), (x,))

        def backward(g):
            if x.requires_grad:
                x._accumulate(
                    np.repeat(np.expand_dims(g / t, axis), t, axis=axis)
                )

    elif mode == "last":
        idx = [slice(None)] * x.data.ndim
        idx[axis] = -1
        out = Tensor._from_op(np.ascontiguousarray(x.data[tuple(idx)]), (x,))

        def backward(g):
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                gx[tuple(idx)] = g
                x._accumulate(gx)

    else:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    out._backward = backward
    return out


def lstm_layer(x, wx_f, wh_f, b_f, wx_r=None, wh_r=None, b_r=None):
    """LSTM over (T, Din) or (B, T, Din); returns (.., T, H) or (.., T, 2H).

    Gate layout along the 4H axis is [input, forget, cell, output]. Passing
    the reverse-direction weights makes the layer bidirectional: a second
    pass runs over time-reversed input and its output (flipped back) is
    concatenated on the feature axis.
    """
    bidirectional = wx_r is not None
    parents = [x, wx_f, wh_f, b_f]
    if bidirectional:
        parents += [wx_r, wh_r, b_r]
    _check_same_dtype(*parents)

    h = wh_f.data.shape[1]
    din = x.data.shape[-1]
    for wx, wh, b in ((wx_f, wh_f, b_f),) + (
        ((wx_r, wh_r, b_r),) if bidirectional else ()
    ):
        if wx.data.shape != (4 * h, din) or wh.data.shape != (4 * h, h) or b.data.shape != (4 * h,):
            raise ConfigError(
                f"lstm shape mismatch: wx {wx.shape}, wh {wh.shape}, b {b.shape} "
                f"for Din={din}, H={h}"
            )
    if x.data.ndim not in (2, 3):
        raise ConfigError(f"lstm input rank must be 2 or 3, got {x.shape}")

    squeeze = x.data.ndim == 2
    x3 = x.data[None] if squeeze else x.data

    h_f, cache_f = _lstm_forward(x3, wx_f.data, wh_f.data, b_f.data)
    if bidirectional:
        h_r, cache_r = _lstm_forward(x3[:, ::-1], wx_r.data, wh_r.data, b_r.data)
        y = np.concatenate([h_f, h_r[:, ::-1]], axis=-1)
    else:
        y = h_f
    out = Tensor._from_op(y[0] if squeeze else y, parents)

    def backward(g):
        g3 = g[None] if squeeze else g
        gh_f = g3[..., :h]
        gx, gwx, gwh, gb = _lstm_backward(x3, wx_f.data, wh_f.data, gh_f, cache_f,
                                          need_gx=x.requires_grad)
        if bidirectional:
            gh_r = np.ascontiguousarray(g3[..., h:][:, ::-1])
            gx_r, gwx_r, gwh_r, gb_r = _lstm_backward(
                np.ascontiguousarray(x3[:, ::-1]), wx_r.data, wh_r.data, gh_r,
                cache_r, need_gx=x.requires_grad)
            if wx_r.requires_grad:
                wx_r._accumulate(gwx_r)
            if wh_r.requires_grad:
                wh_r._accumulate(gwh_r)
            if b_r.requires_grad:
                b_r._accumulate(gb_r)
            if x.requires_grad:
                gx = gx + gx_r[:, ::-1]
        if x.requires_grad:
            x._accumulate(gx[0] if squeeze else gx)
        if wx_f.requires_grad:
            wx_f._accumulate(gwx)
        if wh_f.requires_grad:
            wh_f._accumulate(gwh)
        if b_f.requires_grad:
            b_f._accumulate(gb)

    out._backward = backward
    return out


def _lstm_forward(x, wx, wh, b):
    bsz, t, _ = x.shape
    hdim = wh.shape[1]
    # input contribution for every step in one GEMM
    xw = (x.reshape(bsz * t, -1) @ wx.T + b).reshape(bsz, t, 4 * hdim)
    i_s = np.empty((t, bsz, hdim), dtype=x.dtype)
    f_s = np.empty_like(i_s)
    g_s = np.empty_like(i_s)
    o_s = np.empty_like(i_s)
    c_s = np.empty_like(i_s)
    tc_s = np.empty_like(i_s)
    h_seq = np.empty((bsz, t, hdim), dtype=x.dtype)
    h_prev = np.zeros((bsz, hdim), dtype=x.dtype)
    c_prev = np.zeros((bsz, hdim), dtype=x.dtype)
    for step in range(t):
        pre = xw[:, step] + h_prev @ wh.T
        i = _sigmoid(pre[:, :hdim])
        f = _sigmoid(pre[:, hdim:2 * hdim])
        gg = np.tanh(pre[:, 2 * hdim:3 * hdim])
        o = _sigmoid(pre[:, 3 * hdim:])
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        h_prev = o * tc
        i_s[step], f_s[step], g_s[step], o_s[step] = i, f, gg, o
        c_s[step], tc_s[step] = c, tc
        h_seq[:, step] = h_prev
        c_prev = c
    return h_seq, (i_s, f_s, g_s, o_s, c_s, tc_s, h_seq)


def _lstm_backward(x, wx, wh, gh_seq, cache, need_gx=True):
    i_s, f_s, g_s, o_s, c_s, tc_s, h_seq = cache
    bsz, t, _ = x.shape
    hdim = wh.shape[1]
    gwx = np.zeros_like(wx)
    gwh = np.zeros_like(wh)
    gb = np.zeros(4 * hdim, dtype=x.dtype)
    gx = np.zeros_like(x) if need_gx else None
    dh_next = np.zeros((bsz, hdim), dtype=x.dtype)
    dc_next = np.zeros((bsz, hdim), dtype=x.dtype)
    dpre = np.empty((bsz, 4 * hdim), dtype=x.dtype)
    for step in range(t - 1, -1, -1):
        i, f, gg, o = i_s[step], f_s[step], g_s[step], o_s[step]
        c, tc = c_s[step], tc_s[step]
        c_prev = c_s[step - 1] if step > 0 else np.zeros_like(c)
        h_prev = h_seq[:, step - 1] if step > 0 else np.zeros((bsz, hdim), dtype=x.dtype)
        dh = gh_seq[:, step] + dh_next
        dc = dh * o * (1 - tc * tc) + dc_next
        dpre[:, :hdim] = dc * gg * i * (1 - i)
        dpre[:, hdim:2 * hdim] = dc * c_prev * f * (1 - f)
        dpre[:, 2 * hdim:3 * hdim] = dc * i * (1 - gg * gg)
        dpre[:, 3 * hdim:] = dh * tc * o * (1 - o)
        gwx += dpre.T @ x[:, step]
        gwh += dpre.T @ h_prev
        gb += dpre.sum(axis=0)
        if need_gx:
            gx[:, step] = dpre @ wx
        dh_next = dpre @ wh
        dc_next = dc * f
    return gx, gwx, gwh, gb
