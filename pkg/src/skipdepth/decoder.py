"""Pixel-query decoder: pooled initialisation, skip fusion stages and the bin head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import RelativePositionBias, WindowGrid, windowed_cross_attention
from .backbone import FeaturePyramid
from .errors import ConfigError, ContractError, DimensionError
from .nn import MLP, Conv3x3, LayerNorm, Linear, Module
from .tensor import Tensor

FUSION_MODES = ("sam", "add_conv", "cat_conv")
FINAL_RESIDUALS = ("literal", "alternative")
POOL_GRIDS = (1, 2, 3, 6)


@dataclass(frozen=True)
class StageConfig:
    """Per-stage widths and heads, listed from the finest stage (1/4) to the coarsest (1/32)."""

    channels: tuple[int, ...] = (16, 32, 64, 128)
    heads: tuple[int, ...] = (2, 4, 8, 16)
    window: int = 7

    def __post_init__(self):
        if len(self.channels) != 4 or len(self.heads) != 4:
            raise ConfigError("stage config needs exactly four channel and head values")
        for d, h in zip(self.channels, self.heads):
            if h < 1 or d % h:
                raise ConfigError(f"stage width {d} is not divisible by {h} heads")
        for d in self.channels[1:]:
            if d % 4:
                raise ConfigError(f"stage width {d} must be divisible by 4 for pixel shuffle")
        if self.window < 1:
            raise ConfigError("window size must be positive")


PAPER_STAGES = StageConfig(channels=(128, 256, 512, 1024), heads=(4, 8, 16, 32), window=7)


class PixelQueryInit(Module):
    """Pyramid pooling of the coarsest encoder map into initial pixel queries."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.fuse = Conv3x3(cin * (1 + len(POOL_GRIDS)), cout, rng)

    def __call__(self, e4: Tensor) -> Tensor:
        h, w = e4.shape[:2]
        if min(h, w) < max(POOL_GRIDS):
            raise ContractError(f"pixel query init needs extents >= {max(POOL_GRIDS)}, got {h}x{w}")
        branches = [e4]
        for g in POOL_GRIDS:
            branches.append(T.bilinear_resize(T.adaptive_avg_pool(e4, (g, g)), (h, w)))
        return self.fuse(T.concat(branches, axis=-1))


def pqi_init(e4: Tensor, module: PixelQueryInit) -> Tensor:
    return module(e4)


class SamBlock(Module):
    """Windowed cross-attention from decoder queries to encoder keys/values.

    Residual structure, with Q and E the 3x3-projected inputs::

        A = attention(W_q LN(Q), W_k LN(E), W_v LN(E)) + Q
        A = MLP1(A) + A
        out = MLP2(A) + Q + E        (literal)
        out = MLP2(A) + A            (alternative)
    """

    def __init__(
        self,
        cq: int,
        ce: int,
        dim: int,
        heads: int,
        window: int,
        rng: np.random.Generator,
        final_residual: str = "literal",
    ):
        if final_residual not in FINAL_RESIDUALS:
            raise ConfigError(f"unknown final residual {final_residual!r}")
        self.conv_q = Conv3x3(cq, dim, rng)
        self.conv_e = Conv3x3(ce, dim, rng)
        self.norm_q = LayerNorm(dim)
        self.norm_e = LayerNorm(dim)
        self.w_q = Linear(dim, dim, rng)
        self.w_k = Linear(dim, dim, rng)
        self.w_v = Linear(dim, dim, rng)
        self.rpb = RelativePositionBias(window, heads, rng)
        self.mlp1 = MLP(dim, 4 * dim, dim, rng)
        self.mlp2 = MLP(dim, 4 * dim, dim, rng)
        self.heads = heads
        self.window = window
        self.final_residual = final_residual

    def project(self, qhat: Tensor, e: Tensor) -> tuple[Tensor, Tensor]:
        if qhat.shape[:2] != e.shape[:2]:
            raise DimensionError(f"query map {qhat.shape} and encoder map {e.shape} are not aligned")
        return self.conv_q(qhat), self.conv_e(e)

    def __call__(self, qhat: Tensor, e: Tensor) -> Tensor:
        q_in, e_in = self.project(qhat, e)
        qn, en = self.norm_q(q_in), self.norm_e(e_in)
        grid = WindowGrid(q_in.shape[0], q_in.shape[1], self.window)
        a = windowed_cross_attention(self.w_q(qn), self.w_k(en), self.w_v(en), self.rpb, self.heads, grid)
        a = a + q_in
        a = self.mlp1(a) + a
        if self.final_residual == "literal":
            return self.mlp2(a) + q_in + e_in
        return self.mlp2(a) + a


def sam_block(qhat: Tensor, e: Tensor, block: SamBlock) -> Tensor:
    return block(qhat, e)


def fuse_baseline(qhat: Tensor, e: Tensor, mode: str, conv: Conv3x3) -> Tensor:
    """Convolutional skip fusion of already width-matched maps."""
    if qhat.shape[:2] != e.shape[:2]:
        raise DimensionError(f"query map {qhat.shape} and encoder map {e.shape} are not aligned")
    if mode == "add_conv":
        return conv(qhat + e)
    if mode == "cat_conv":
        return conv(T.concat([qhat, e], axis=-1))
    raise ConfigError(f"unknown baseline fusion {mode!r}")


class ConvFusion(Module):
    """Add-Conv / Cat-Conv ablation stand-in for :class:`SamBlock`."""

    def __init__(self, cq: int, ce: int, dim: int, mode: str, rng: np.random.Generator):
        if mode not in ("add_conv", "cat_conv"):
            raise ConfigError(f"unknown baseline fusion {mode!r}")
        self.conv_q = Conv3x3(cq, dim, rng)
        self.conv_e = Conv3x3(ce, dim, rng)
        self.fuse = Conv3x3(dim if mode == "add_conv" else 2 * dim, dim, rng)
        self.mode = mode

    def __call__(self, qhat: Tensor, e: Tensor) -> Tensor:
        if qhat.shape[:2] != e.shape[:2]:
            raise DimensionError(f"query map {qhat.shape} and encoder map {e.shape} are not aligned")
        return fuse_baseline(self.conv_q(qhat), self.conv_e(e), self.mode, self.fuse)


class Decoder(Module):
    """Coarse-to-fine refinement from 1/32 to 1/4 followed by a per-pixel bin softmax."""

    def __init__(
        self,
        encoder_channels: Sequence[int],
        query_channels: int,
        stages: StageConfig,
        n_bins: int,
        rng: np.random.Generator,
        fusion: str = "sam",
        final_residual: str = "literal",
    ):
        if fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {fusion!r}; expected one of {FUSION_MODES}")
        if len(encoder_channels) != 4:
            raise ConfigError("decoder needs four encoder widths")
        self.fusion = fusion
        self.stages = stages
        self.n_bins = n_bins
        blocks = []
        for i in (4, 3, 2, 1):
            cq = query_channels if i == 4 else stages.channels[i] // 4
            ce = encoder_channels[i - 1]
            dim = stages.channels[i - 1]
            if fusion == "sam":
                block = SamBlock(cq, ce, dim, stages.heads[i - 1], stages.window, rng, final_residual)
            else:
                block = ConvFusion(cq, ce, dim, fusion, rng)
            blocks.append((i, block))
        prefix = "sam" if fusion == "sam" else "fuse"
        for i, block in blocks:
            setattr(self, f"{prefix}{i}", block)
        self.head = Conv3x3(stages.channels[0], n_bins, rng)
        self._order = [block for _, block in blocks]

    def logits(self, pyramid: FeaturePyramid, q_init: Tensor) -> Tensor:
        encoder_maps = (pyramid.e4, pyramid.e3, pyramid.e2, pyramid.e1)
        q = q_init
        for step, (block, e) in enumerate(zip(self._order, encoder_maps)):
            if step:
                q = T.pixel_shuffle(q, 2)
            if q.shape[:2] != e.shape[:2]:
                raise ConfigError(f"decoder stage {4 - step} query {q.shape} misaligned with encoder {e.shape}")
            q = block(q, e)
        return self.head(q)

    def __call__(self, pyramid: FeaturePyramid, q_init: Tensor) -> Tensor:
        return T.softmax(self.logits(pyramid, q_init), axis=-1)


def decode(pyramid: FeaturePyramid, q_init: Tensor, decoder: Decoder) -> Tensor:
    return decoder(pyramid, q_init)
