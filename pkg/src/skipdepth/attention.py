"""Non-overlapping window partitioning and windowed multi-head cross-attention."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Module, Parameter
from .tensor import Tensor


@dataclass(frozen=True)
class WindowGrid:
    """Tiling of an ``height`` x ``width`` map into ``window`` x ``window`` tiles.

    Maps whose extents are not multiples of the window are zero-padded at the
    bottom and right; ``mask`` marks the real pixels of the padded map.
    """

    height: int
    width: int
    window: int = 7

    @property
    def pad_bottom(self) -> int:
        return -self.height % self.window

    @property
    def pad_right(self) -> int:
        return -self.width % self.window

    @property
    def padded_h(self) -> int:
        return self.height + self.pad_bottom

    @property
    def padded_w(self) -> int:
        return self.width + self.pad_right

    @property
    def n_windows(self) -> int:
        return (self.padded_h // self.window) * (self.padded_w // self.window)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.padded_h, self.padded_w), dtype=bool)
        m[: self.height, : self.width] = True
        return m

    @cached_property
    def window_mask(self) -> np.ndarray:
        """Per-window validity of each position, shape [n_windows, window**2]."""
        w = self.window
        m = self.mask.reshape(self.padded_h // w, w, self.padded_w // w, w)
        return m.transpose(0, 2, 1, 3).reshape(self.n_windows, w * w)


def window_partition(x: Tensor, grid: WindowGrid) -> Tensor:
    """[H, W, C] -> [n_windows, window**2, C], windows and pixels in row-major order."""
    h, w, c = x.shape
    if (h, w) != (grid.height, grid.width):
        raise DimensionError(f"map {x.shape} does not match grid {grid.height}x{grid.width}")
    ws = grid.window
    if grid.pad_bottom or grid.pad_right:
        x = T.pad(x, ((0, grid.pad_bottom), (0, grid.pad_right), (0, 0)))
    t = T.reshape(x, (grid.padded_h // ws, ws, grid.padded_w // ws, ws, c))
    t = T.transpose(t, (0, 2, 1, 3, 4))
    return T.reshape(t, (grid.n_windows, ws * ws, c))


def window_reverse(wins: Tensor, grid: WindowGrid) -> Tensor:
    """Inverse of :func:`window_partition`; padding is dropped."""
    ws = grid.window
    if wins.ndim != 3 or wins.shape[:2] != (grid.n_windows, ws * ws):
        raise DimensionError(
            f"windows {wins.shape} inconsistent with grid ({grid.n_windows} windows of {ws * ws})"
        )
    c = wins.shape[2]
    t = T.reshape(wins, (grid.padded_h // ws, grid.padded_w // ws, ws, ws, c))
    t = T.transpose(t, (0, 2, 1, 3, 4))
    t = T.reshape(t, (grid.padded_h, grid.padded_w, c))
    if grid.pad_bottom or grid.pad_right:
        t = t[: grid.height, : grid.width]
    return t


def relative_position_index(window: int) -> np.ndarray:
    """[window**2, window**2] map from (query, key) offsets to rows of a (2w-1)**2 table."""
    coords = np.stack(np.divmod(np.arange(window * window), window), axis=1)
    rel = coords[:, None, :] - coords[None, :, :] + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


class RelativePositionBias(Module):
    """Learnable additive attention bias shared by all windows of one stage."""

    def __init__(self, window: int, heads: int, rng: np.random.Generator):
        self.window = window
        self.heads = heads
        self.table = Parameter(rng.normal(0.0, 0.02, size=((2 * window - 1) ** 2, heads)))
        self.index = relative_position_index(window)

    def __call__(self) -> Tensor:
        """Realised bias of shape [heads, window**2, window**2]."""
        b = T.take(self.table, self.index)
        return T.transpose(b, (2, 0, 1))


def windowed_cross_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias: RelativePositionBias | Tensor | None,
    heads: int,
    grid: WindowGrid,
) -> Tensor:
    """Multi-head attention restricted to the windows of ``grid``.

    Per window and head: ``softmax(q k^T / sqrt(head_dim) + B) v``, with padded
    key positions excluded.  Inputs and output are [H, W, D].
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"query/key/value shapes differ: {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    if d % heads:
        raise DimensionError(f"{d} channels cannot be split into {heads} heads")
    hd = d // heads
    n = grid.window**2

    def split(x):
        w = window_partition(x, grid)
        return T.transpose(T.reshape(w, (grid.n_windows, n, heads, hd)), (0, 2, 1, 3))

    qw, kw, vw = split(q), split(k), split(v)
    scores = T.mul(T.matmul(qw, T.transpose(kw, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    if isinstance(bias, RelativePositionBias):
        bias = bias()
    if bias is not None:
        scores = T.add(scores, bias)
    key_mask = None
    if grid.pad_bottom or grid.pad_right:
        key_mask = grid.window_mask[:, None, None, :]
    attn = T.softmax(scores, axis=-1, mask=key_mask)
    out = T.transpose(T.matmul(attn, vw), (0, 2, 1, 3))
    return window_reverse(T.reshape(out, (grid.n_windows, n, d)), grid)
