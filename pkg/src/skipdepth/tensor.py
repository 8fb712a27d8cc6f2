"""Dense tensors with reverse-mode differentiation.

Every operation records a closure mapping the output gradient to one gradient
per input.  :func:`backward` walks the recorded graph in reverse topological
order and accumulates gradients additively, so a tensor used several times
receives the sum of its contributions.

Spatial maps are stored channels-last: ``[H, W, C]``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NumericInputError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_state = {"dtype": np.float32, "grad": True}


def set_precision(mode: str) -> None:
    """Select the global floating point mode, ``"f32"`` or ``"f64"``."""
    if mode not in _PRECISIONS:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(_PRECISIONS)}")
    _state["dtype"] = _PRECISIONS[mode]


def get_dtype():
    return _state["dtype"]


def get_precision() -> str:
    return "f64" if _state["dtype"] == np.float64 else "f32"


@contextlib.contextmanager
def precision(mode: str):
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph."""
    previous = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = previous


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    """An n-dimensional array with an optional gradient record.

    Tensors created with ``requires_grad=False`` are constants: they are never
    assigned a gradient.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _state["dtype"])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf tensor reachable from ``loss``.

    Gradients accumulate into existing ``grad`` buffers; call ``zero_grad``
    between independent passes.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar seed, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _result(a.data**p, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericInputError("log of a non-positive value")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def clamped_sqrt(a) -> Tensor:
    """Square root of ``max(a, 0)``; the gradient is zero where ``a <= 0``."""
    a = as_tensor(a)
    positive = a.data > 0
    out = np.sqrt(np.where(positive, a.data, 0))

    def bw(g):
        safe = np.where(positive, out, 1)
        return (np.where(positive, g * 0.5 / safe, 0),)

    return _result(out, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _result(np.where(on, a.data, 0), (a,), lambda g: (g * on,))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)

    return _result(out, (a,), bw)


# ------------------------------------------------------------------ reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _result(np.cumsum(a.data, axis=axis), (a,), bw)


# --------------------------------------------------------------------- layout


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data

    parts = index if isinstance(index, tuple) else (index,)
    unique = all(not isinstance(p, (list, np.ndarray)) or np.asarray(p).dtype == bool for p in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if unique:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.asarray(a.data[index]), (a,), bw)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, parts, bw)


def pad(a, widths) -> Tensor:
    """Zero-pad; ``widths`` follows :func:`numpy.pad`."""
    a = as_tensor(a)
    widths = tuple(tuple(w) for w in widths)
    window = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _result(np.pad(a.data, widths), (a,), lambda g: (g[window],))


def take(table, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by an integer index array."""
    table = as_tensor(table)
    index = np.asarray(index)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(table.data[index], (table,), bw)


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading axes broadcast from extent 1."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), bw)


def linear(x, w, b=None) -> Tensor:
    """Affine map along the last axis: ``x @ w + b`` with ``w`` of shape [din, dout]."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear input {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, w.shape[0])
    out = flat @ w.data
    parents: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear bias {b.shape} does not match weight {w.shape}")
        out = out + b.data
        parents = (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        grads = [(g2 @ w.data.T).reshape(x.shape), flat.T @ g2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result(out.reshape(lead + (w.shape[1],)), parents, bw)


def _im2col(xp: np.ndarray, stride: int, out_h: int, out_w: int) -> np.ndarray:
    taps = [
        xp[ky : ky + stride * (out_h - 1) + 1 : stride, kx : kx + stride * (out_w - 1) + 1 : stride]
        for ky in range(3)
        for kx in range(3)
    ]
    return np.stack(taps, axis=2).reshape(out_h * out_w, -1)


def conv2d(x, k, bias=None, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1.

    ``x`` is [H, W, Cin], ``k`` is [3, 3, Cin, Cout].  With stride 1 the spatial
    extents are preserved; stride s gives ceil(H/s) x ceil(W/s).
    """
    x, k = as_tensor(x), as_tensor(k)
    if k.ndim != 4 or k.shape[:2] != (3, 3):
        raise DimensionError(f"conv2d kernel must be [3, 3, Cin, Cout], got {k.shape}")
    if x.ndim != 3 or x.shape[2] != k.shape[2]:
        raise DimensionError(f"conv2d input {x.shape} has channels incompatible with kernel {k.shape}")
    h, w, cin = x.shape
    cout = k.shape[3]
    out_h, out_w = (h - 1) // stride + 1, (w - 1) // stride + 1
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    cols = _im2col(xp, stride, out_h, out_w)
    kmat = k.data.reshape(9 * cin, cout)
    out = cols @ kmat
    parents: tuple[Tensor, ...] = (x, k)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d bias {bias.shape} does not match {cout} output channels")
        out = out + bias.data
        parents = (x, k, bias)

    def bw(g):
        g2 = g.reshape(out_h * out_w, cout)
        gk = (cols.T @ g2).reshape(k.shape)
        gcols = (g2 @ kmat.T).reshape(out_h, out_w, 3, 3, cin)
        gxp = np.zeros_like(xp)
        for ky in range(3):
            for kx in range(3):
                gxp[
                    ky : ky + stride * (out_h - 1) + 1 : stride,
                    kx : kx + stride * (out_w - 1) + 1 : stride,
                ] += gcols[:, :, ky, kx]
        grads = [gxp[1:-1, 1:-1], gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result(out.reshape(out_h, out_w, cout), parents, bw)


# -------------------------------------------------------------- normalisation


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax.

    ``mask`` (boolean, broadcastable to ``x``) marks admissible entries; the
    rest get exactly zero probability.  Every slice along ``axis`` must keep at
    least one admissible entry.
    """
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericInputError("softmax input contains non-finite values")
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm affine {gamma.shape}/{beta.shape} does not match {n} channels")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), bw)


# -------------------------------------------------------------- spatial ops


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[i, j, c] = sum_pq rows[i, p] cols[j, q] x[p, q, c]."""
    rows = rows.astype(x.dtype)
    cols = cols.astype(x.dtype)

    def apply(a, r, c):
        t = np.tensordot(r, a, axes=(1, 0))
        return np.tensordot(c, t, axes=(1, 1)).transpose(1, 0, 2)

    def bw(g):
        return (apply(g, rows.T, cols.T),)

    return _result(apply(x.data, rows, cols), (x,), bw)


def global_avg_pool(x) -> Tensor:
    """Spatial mean per channel: [H, W, C] -> [C]."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"global_avg_pool expects [H, W, C], got {x.shape}")
    return mean(x, axis=(0, 1))


def _pool_matrix(size: int, out: int) -> np.ndarray:
    m = np.zeros((out, size))
    for i in range(out):
        lo, hi = (i * size) // out, ((i + 1) * size) // out
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(x, out: tuple[int, int]) -> Tensor:
    """Average over half-open bins [floor(i*H/h), floor((i+1)*H/h))."""
    x = as_tensor(x)
    h, w = out
    if x.ndim != 3 or not (1 <= h <= x.shape[0] and 1 <= w <= x.shape[1]):
        raise DimensionError(f"cannot pool {x.shape} to {out}")
    return _separable(x, _pool_matrix(x.shape[0], h), _pool_matrix(x.shape[1], w))


def _interp_matrix(size: int, out: int) -> np.ndarray:
    m = np.zeros((out, size))
    scale = size / out
    for i in range(out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), size - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, size - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def bilinear_resize(x, out: tuple[int, int]) -> Tensor:
    """Bilinear resampling with half-pixel centres (align_corners=False)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"bilinear_resize expects [H, W, C], got {x.shape}")
    return _separable(x, _interp_matrix(x.shape[0], out[0]), _interp_matrix(x.shape[1], out[1]))


def bilinear_upsample(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if factor < 1:
        raise ContractError("upsampling factor must be >= 1")
    return bilinear_resize(x, (x.shape[0] * factor, x.shape[1] * factor))


def pixel_shuffle(x, r: int) -> Tensor:
    """[H, W, C] -> [rH, rW, C/r^2] with out[y*r+dy, x*r+dx, k] = in[y, x, k*r*r + dy*r + dx]."""
    x = as_tensor(x)
    h, w, c = x.shape
    if c % (r * r):
        raise DimensionError(f"pixel_shuffle needs channels divisible by {r * r}, got {c}")
    t = reshape(x, (h, w, c // (r * r), r, r))
    t = transpose(t, (0, 3, 1, 4, 2))
    return reshape(t, (h * r, w * r, c // (r * r)))


def pixel_unshuffle(x, r: int) -> Tensor:
    x = as_tensor(x)
    h, w, c = x.shape
    if h % r or w % r:
        raise DimensionError(f"pixel_unshuffle needs extents divisible by {r}, got {x.shape}")
    t = reshape(x, (h // r, r, w // r, r, c))
    t = transpose(t, (0, 2, 4, 1, 3))
    return reshape(t, (h // r, w // r, c * r * r))
