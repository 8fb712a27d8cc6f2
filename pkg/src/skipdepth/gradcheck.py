"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_gradient(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of the scalar ``f(point)`` w.r.t. ``point``, perturbed in place.

    Only the flat indices in ``coords`` are evaluated (all when ``None``);
    the other entries of the returned array are zero.
    """
    if not point.data.flags.c_contiguous:
        point.data = np.ascontiguousarray(point.data)
    flat = point.data.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    indices = range(flat.size) if coords is None else coords
    with no_grad():
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            hi = float(f(point).data)
            flat[i] = original - step
            lo = float(f(point).data)
            flat[i] = original
            out[i] = (hi - lo) / (2 * step)
    return out.reshape(point.shape)


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps ``point`` to a scalar; it may also close over ``point`` (which must
    require gradients).  The error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.

    ``max_coords`` caps the number of coordinates probed; they are drawn
    without replacement from ``rng``.
    """
    if not point.requires_grad:
        raise ValueError("grad_check point must require gradients")
    saved = point.grad
    point.grad = None
    loss = f(point)
    backward(loss)
    analytic = np.zeros(point.shape) if point.grad is None else np.asarray(point.grad, dtype=np.float64)
    point.grad = saved

    coords = None
    if max_coords is not None and max_coords < point.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = rng.choice(point.size, size=max_coords, replace=False)
    numeric = numerical_gradient(f, point, step, coords)

    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    if coords is not None:
        a, n = a[coords], n[coords]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))
