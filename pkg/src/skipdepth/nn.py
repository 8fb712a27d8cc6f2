"""Parameter containers and the small layers the model is assembled from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Parameter:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-s, s, size=shape))


class Module:
    """Base class; parameters are discovered from public attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def cast(self, mode: str) -> None:
        """Convert every parameter to the precision ``mode`` in place."""
        dtype = T._PRECISIONS[mode]
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv3x3(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, stride: int = 1):
        self.weight = glorot(rng, (3, 3, cin, cout), 9 * cin, 9 * cout)
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        self.weight = glorot(rng, (din, dout), din, dout)
        self.bias = Parameter(np.zeros(dout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, din: int, hidden: int, dout: int, rng: np.random.Generator):
        self.fc1 = Linear(din, hidden, rng)
        self.fc2 = Linear(hidden, dout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
