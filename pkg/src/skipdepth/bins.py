"""Adaptive depth bins: width prediction, centres, and depth composition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import MLP, Module
from .tensor import Tensor

WIDTH_FLOOR = 1e-3


@dataclass
class BinSpec:
    widths: Tensor  # [n_bins], positive, sums to 1
    centers: Tensor  # [n_bins], strictly increasing
    d_min: float
    d_max: float


def _check_range(d_min: float, d_max: float) -> None:
    if not d_min < d_max:
        raise ContractError(f"invalid depth range [{d_min}, {d_max}]")


def normalize_widths(raw: Tensor) -> Tensor:
    shifted = T.relu(raw) + WIDTH_FLOOR
    return shifted / T.tsum(shifted, axis=-1, keepdims=True)


def bin_centers(widths, d_min: float, d_max: float) -> Tensor:
    """c_i = d_min + (d_max - d_min) * (b_i / 2 + sum_{j<i} b_j)."""
    _check_range(d_min, d_max)
    b = T.as_tensor(widths)
    tol = 1e-6 if b.dtype == np.float64 else 1e-4
    if np.any(b.data <= 0) or abs(float(b.data.sum()) - 1.0) > tol:
        raise ContractError("bin widths must be positive and sum to 1")
    # running prefix sum minus half the current width
    return d_min + (d_max - d_min) * (T.cumsum(b, axis=-1) - 0.5 * b)


class BinCenterPredictor(Module):
    """Pooled pixel queries -> MLP -> normalised bin widths."""

    def __init__(self, cin: int, hidden: int, n_bins: int, rng: np.random.Generator):
        if n_bins < 2:
            raise ContractError("need at least two bins")
        self.mlp = MLP(cin, hidden, n_bins, rng)
        self.n_bins = n_bins

    def __call__(self, q_init: Tensor) -> Tensor:
        return self.mlp(T.global_avg_pool(q_init))


def predict_bin_widths(q_init: Tensor, bcp: BinCenterPredictor, d_min: float, d_max: float) -> BinSpec:
    _check_range(d_min, d_max)
    widths = normalize_widths(bcp(q_init))
    return BinSpec(widths, bin_centers(widths, d_min, d_max), d_min, d_max)


def compose_depth(probs: Tensor, centers: Tensor) -> Tensor:
    """Per-pixel expectation of the centres under ``probs`` ([h, w, n] -> [h, w])."""
    h, w, n = probs.shape
    return T.reshape(T.matmul(probs, T.reshape(centers, (n, 1))), (h, w))
