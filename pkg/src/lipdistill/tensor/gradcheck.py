"""Finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor

# Entries whose gradients are tiny are compared against a floor instead of
# their own magnitude: the larger of REL_FLOOR and SCALE_FLOOR times the
# tensor's largest analytic entry. Exact zeros (e.g. inputs skipped by a
# strided conv) otherwise turn pure roundoff into large relative errors.
REL_FLOOR = 1e-6
SCALE_FLOOR = 1e-3


def numeric_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by the five-point central difference, perturbing ``x.data`` in place.

    The stencil's truncation error is O(eps**4), which keeps the estimate
    accurate at steps small enough to rarely straddle an activation kink.
    """
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        vals = []
        for step in (2.0, 1.0, -1.0, -2.0):
            flat[i] = orig + step * eps
            vals.append(f().item())
        flat[i] = orig
        gflat[i] = (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * eps)
    return g


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor] | Tensor, eps: float = 1e-5) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    Each entry is divided by ``max(|analytic|, |numeric|, floor)``; see
    ``SCALE_FLOOR`` for the floor.

    ``f`` is re-evaluated from scratch for every perturbation and must return
    a scalar tensor built from ``inputs``. Inputs should be f64.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for x in inputs:
        x.grad = None
    f().backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        numeric = numeric_grad(f, x, eps)
        if analytic.size:
            floor = max(REL_FLOOR, SCALE_FLOOR * float(np.abs(analytic).max()))
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            worst = max(worst, float((np.abs(analytic - numeric) / denom).max()))
    return worst
