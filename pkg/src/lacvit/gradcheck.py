"""Finite-difference verification of analytic gradients.

Central differences with an explicit step, compared coordinate-wise against
whatever :func:`lacvit.tensor.backward` produced.  Used by the test suite and
the acceptance gate; kept in the library because gradient verifiability is a
design goal of the whole artifact.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .tensor import Parameter, record_relu_inputs


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Largest coordinate-wise relative difference.

    The denominator is floored so coordinates that are legitimately zero do
    not turn finite-difference noise into huge ratios.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_difference_grad(
    loss_fn: Callable[[], float], param: Parameter, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` w.r.t. every coordinate.

    ``loss_fn`` must rebuild its forward pass from ``param.data`` on each
    call; the parameter is perturbed in place and restored.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad.reshape(param.data.shape)


def max_gradient_error(
    loss_fn: Callable[[], float],
    params: Iterable[Parameter],
    step: float = 1e-5,
) -> float:
    """Worst relative error across all parameters' analytic vs FD gradients.

    Analytic gradients must already be populated (one backward pass) before
    calling; the numeric side is recomputed here.
    """
    worst = 0.0
    for p in params:
        numeric = finite_difference_grad(loss_fn, p, step=step)
        worst = max(worst, rel_error(p.grad, numeric))
    return worst


def relu_kink_margin(forward_fn: Callable[[], object]) -> float:
    """Smallest |relu pre-activation| across one forward pass.

    Central differences straddle the relu kink when this margin is of the
    order of the probe step, so checks should pick inputs where the margin
    comfortably exceeds it.
    """
    sink: list[np.ndarray] = []
    with record_relu_inputs(sink):
        forward_fn()
    if not sink:
        return math.inf
    return min(float(np.abs(arr).min()) for arr in sink)
