#!/usr/bin/env python3
"""Benchmark the dilated-conv kernels: compiled extension vs numpy fallback.

Covers the shapes that matter in practice: a streaming window through the
multi-stage default (T=50), a training minibatch (B=16, T=20), and a long
receptive-field probe. Run:

    python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from stimseq import kernels

CASES = [
    # (label,                     B,  T,  Cin, Cout, k, dilation)
    ("stream window, in-proj", 1, 50, 256, 64, 1, 1),
    ("stream window, dilated layer", 1, 50, 64, 64, 5, 4),
    ("train batch, dilated layer", 16, 20, 64, 64, 5, 4),
    ("train batch, 1x1 merge", 16, 20, 128, 64, 1, 1),
    ("long impulse probe", 1, 650, 64, 64, 5, 16),
]


def time_case(backend, b, t, cin, cout, k, dilation, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((b, t, cin)).astype(np.float32)
    w = rng.standard_normal((cout, cin, k)).astype(np.float32)
    bias = rng.standard_normal(cout).astype(np.float32)
    pad = (k - 1) * dilation
    y = backend.conv1d_forward(x, w, bias, dilation, pad)  # warm up
    gy = np.ones_like(y)

    fwd = time.perf_counter()
    for _ in range(repeats):
        backend.conv1d_forward(x, w, bias, dilation, pad)
    fwd = (time.perf_counter() - fwd) / repeats

    backend.conv1d_backward(x, w, gy, dilation, pad)
    bwd = time.perf_counter()
    for _ in range(repeats):
        backend.conv1d_backward(x, w, gy, dilation, pad)
    bwd = (time.perf_counter() - bwd) / repeats
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"active backend: {kernels.backend_name()}")
    print(f"benchmarking: {', '.join(b.name for b in backends)}  "
          f"(repeats={args.repeats})\n")
    header = f"{'case':32s}" + "".join(
        f"{b.name + ' fwd':>14s}{b.name + ' bwd':>14s}" for b in backends
    )
    print(header)
    print("-" * len(header))
    for label, *shape in CASES:
        row = f"{label:32s}"
        results = []
        for backend in backends:
            fwd, bwd = time_case(backend, *shape, args.repeats)
            results.append((fwd, bwd))
            row += f"{fwd * 1e6:12.0f} us{bwd * 1e6:12.0f} us"
        print(row)
        if len(results) == 2:
            speed_fwd = results[0][0] / results[1][0]
            speed_bwd = results[0][1] / results[1][1]
            print(f"{'':32s}  compiled is {speed_fwd:4.1f}x fwd, "
                  f"{speed_bwd:4.1f}x bwd vs numpy")
    print("\nnumbers are per-call wall time; lower is better")


if __name__ == "__main__":
    main()
