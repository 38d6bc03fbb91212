"""Finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

LossAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


def grad_check(f: LossAndGrad, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    f maps a parameter array to (scalar loss, gradient array of x's shape).
    Per-component error is |a - c| / (|a| + |c| + 1e-12); the max over
    components is returned.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")
    x = np.asarray(x, dtype=np.float64)
    value, analytic = f(x)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise ArithmeticError("non-finite loss or gradient at x")
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} != x shape {x.shape}")

    flat = x.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        up, _ = f((flat + step).reshape(x.shape))
        down, _ = f((flat - step).reshape(x.shape))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ArithmeticError(f"non-finite loss at perturbed component {i}")
        numeric[i] = (up - down) / (2.0 * h)

    a = analytic.ravel()
    err = np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + 1e-12)
    return float(err.max())
