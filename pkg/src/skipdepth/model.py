"""The full depth network: encoder, query initialiser, bin predictor and decoder."""
from __future__ import annotations

from dataclasses import asdict
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .backbone import Encoder, FeaturePyramid
from .bins import BinCenterPredictor, BinSpec, compose_depth, predict_bin_widths
from .config import ModelConfig
from .decoder import Decoder, PixelQueryInit, StageConfig
from .errors import CheckpointError
from .fileio import load_checkpoint, save_checkpoint
from .nn import Module
from .tensor import Tensor

IMAGE_MEAN = 0.5
IMAGE_STD = 0.25


class Prediction(NamedTuple):
    depth: Tensor  # [H/4, W/4] metres
    probs: Tensor  # [H/4, W/4, n_bins]
    bins: BinSpec
    pyramid: FeaturePyramid
    queries: Tensor


class DepthModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = cfg
        stages = StageConfig(tuple(cfg.stage_channels), tuple(cfg.heads), cfg.window_size)
        self.encoder = Encoder(cfg.encoder_channels, rng)
        self.pqi = PixelQueryInit(cfg.encoder_channels[3], cfg.query_channels, rng)
        self.bcp = BinCenterPredictor(cfg.query_channels, cfg.bcp_hidden, cfg.n_bins, rng)
        self.decoder = Decoder(
            cfg.encoder_channels, cfg.query_channels, stages, cfg.n_bins, rng, cfg.fusion, cfg.final_residual
        )

    def __call__(self, image) -> Prediction:
        x = (T.as_tensor(image) - IMAGE_MEAN) * (1.0 / IMAGE_STD)
        pyramid = self.encoder(x)
        queries = self.pqi(pyramid.e4)
        bins = predict_bin_widths(queries, self.bcp, self.config.d_min, self.config.d_max)
        probs = self.decoder(pyramid, queries)
        return Prediction(compose_depth(probs, bins.centers), probs, bins, pyramid, queries)

    def predict_full(self, image) -> Tensor:
        """Depth at input resolution: the quarter-scale map upsampled bilinearly by 4."""
        depth = self(image).depth
        up = T.bilinear_upsample(T.reshape(depth, depth.shape + (1,)), 4)
        return T.reshape(up, up.shape[:2])

    def load_state(self, params: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        for name in own:
            if name not in params:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        for name in params:
            if name not in own:
                raise CheckpointError(f"checkpoint has unexpected parameter {name!r}")
        for name, p in own.items():
            value = params[name]
            if value.shape != p.shape:
                raise CheckpointError(f"parameter {name!r} has shape {value.shape}, expected {p.shape}")
            p.data = value.astype(T.get_dtype())
            p.grad = None


def config_to_meta(cfg: ModelConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def meta_to_config(meta: dict) -> ModelConfig:
    return ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta.items()})


def save_model(path, model: DepthModel, extra: dict | None = None) -> None:
    stages = model.decoder.stages
    meta = {
        "model": config_to_meta(model.config),
        "precision": T.get_precision(),
        "stages": {"channels": list(stages.channels), "heads": list(stages.heads), "window": stages.window},
        "bins": {"n_bins": model.config.n_bins, "d_min": model.config.d_min, "d_max": model.config.d_max},
    }
    if extra:
        meta.update(extra)
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple[DepthModel, dict]:
    meta, params = load_checkpoint(path)
    try:
        cfg = meta_to_config(meta["model"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: manifest lacks a usable model config ({exc})") from None
    model = DepthModel(cfg)
    model.load_state(params)
    return model, meta
