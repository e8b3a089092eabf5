"""Finite-difference verification of the autodiff backward passes."""

import numpy as np

from .errors import ConfigError


def grad_check(build, params, eps=1e-3):
    """Compare analytic gradients of `build()` against central differences.

    `build` must construct a fresh graph from `params` (a name -> Tensor
    dict holding float64 leaves with requires_grad) and return a scalar
    Tensor. Returns the maximum relative error
    |a - n| / max(1e-8, |a| + |n|) over every parameter element.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ConfigError(f"grad_check requires float64 parameters, {name} is {p.data.dtype}")
        if not p.requires_grad:
            raise ConfigError(f"grad_check parameter {name} has requires_grad=False")
        p.zero_grad()

    loss = build()
    if loss.data.ndim != 0:
        raise ConfigError("grad_check computation must produce a scalar")
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = build().item()
            flat[idx] = orig - eps
            f_minus = build().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            rel = abs(ana[idx] - numeric) / max(1e-8, abs(ana[idx]) + abs(numeric))
            worst = max(worst, rel)
    return worst
