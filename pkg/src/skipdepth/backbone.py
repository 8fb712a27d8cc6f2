"""Small convolutional encoder producing a four-scale feature pyramid."""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .nn import Conv3x3, Module
from .tensor import Tensor


class FeaturePyramid(NamedTuple):
    e1: Tensor  # 1/4
    e2: Tensor  # 1/8
    e3: Tensor  # 1/16
    e4: Tensor  # 1/32


class Stage(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, first_stride: int, second_stride: int):
        self.conv1 = Conv3x3(cin, cout, rng, stride=first_stride)
        self.conv2 = Conv3x3(cout, cout, rng, stride=second_stride)

    def __call__(self, x: Tensor) -> Tensor:
        return T.gelu(self.conv2(T.gelu(self.conv1(x))))


class Encoder(Module):
    """Stage 1 reduces by 4 with two stride-2 convolutions; stages 2-4 by 2 each."""

    def __init__(self, channels: Sequence[int], rng: np.random.Generator):
        channels = list(channels)
        if len(channels) != 4 or any(b <= a for a, b in zip(channels, channels[1:])):
            raise ConfigError(f"encoder channels must be four strictly increasing values, got {channels}")
        self.channels = channels
        self.stage1 = Stage(3, channels[0], rng, 2, 2)
        self.stage2 = Stage(channels[0], channels[1], rng, 2, 1)
        self.stage3 = Stage(channels[1], channels[2], rng, 2, 1)
        self.stage4 = Stage(channels[2], channels[3], rng, 2, 1)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        h, w = image.shape[:2]
        if h % 32 or w % 32:
            raise ContractError(f"encoder input extents must be divisible by 32, got {h}x{w}")
        e1 = self.stage1(image)
        e2 = self.stage2(e1)
        e3 = self.stage3(e2)
        e4 = self.stage4(e3)
        return FeaturePyramid(e1, e2, e3, e4)


def encode(image: Tensor, encoder: Encoder) -> FeaturePyramid:
    return encoder(image)
