"""Backend selection for the dilated-convolution kernels.

Two interchangeable implementations ship:

* ``numpy``    - im2col + one BLAS GEMM per call. With an optimized BLAS
                 this is the fastest option at this package's shapes
                 (see benchmarks/bench_kernels.py), so ``auto`` picks it.
* ``compiled`` - Cython scalar loops, no BLAS involvement. Select it with
                 STIMSEQ_KERNELS=compiled for BLAS-free installs or when
                 per-window latency must not depend on BLAS thread pools;
                 it also serves as an independent implementation the tests
                 cross-check the numpy path against.

Selection happens once at import so a fixed install always computes
bit-identical results. The backends differ only in floating-point summation
order: cross-backend comparisons are approximate, each backend on its own is
deterministic.
"""

import os

from . import numpy_backend

try:
    from . import _conv_cy as compiled_backend
except ImportError:
    compiled_backend = None


def _select():
    choice = os.environ.get("STIMSEQ_KERNELS", "auto")
    if choice in ("auto", "numpy"):
        return numpy_backend
    if choice == "compiled":
        if compiled_backend is None:
            raise ImportError(
                "STIMSEQ_KERNELS=compiled but the stimseq._conv_cy extension "
                "is not built; reinstall with Cython and a C compiler"
            )
        return compiled_backend
    raise ImportError(f"unknown STIMSEQ_KERNELS value: {choice!r}")


active = _select()


def backend_name():
    return active.name


def available_backends():
    out = [numpy_backend]
    if compiled_backend is not None:
        out.append(compiled_backend)
    return out


class use_backend:
    """Temporarily switch the active backend (tests and benchmarks)."""

    def __init__(self, backend):
        self._backend = backend

    def __enter__(self):
        global active
        self._prev = active
        active = self._backend
        return active

    def __exit__(self, *exc):
        global active
        active = self._prev
        return False


def conv1d_forward(x, w, bias, dilation, pad_left):
    return active.conv1d_forward(x, w, bias, dilation, pad_left)


def conv1d_backward(x, w, gy, dilation, pad_left):
    return active.conv1d_backward(x, w, gy, dilation, pad_left)
