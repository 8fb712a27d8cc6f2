"""Scale-invariant log loss and the standard depth evaluation metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericInputError
from .tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.85
    alpha: float = 10.0

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ContractError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.alpha <= 0:
            raise ContractError(f"alpha must be positive, got {self.alpha}")


def silog_loss(pred: Tensor, gt, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """alpha * sqrt(mean(g^2) - lambda * mean(g)^2), g = log(pred) - log(gt) on masked pixels.

    The radicand is clamped at zero; the gradient there is zero.
    """
    pred = T.as_tensor(pred)
    gt = np.asarray(T.as_tensor(gt).data)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ContractError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ContractError("silog_loss needs at least one valid pixel")
    if np.any(pred.data[mask] <= 0) or np.any(gt[mask] <= 0):
        raise NumericInputError("depth must be positive on valid pixels")
    g = T.log(pred[mask]) - np.log(gt[mask])
    mean_sq = T.tsum(g * g) / n
    mean_g = T.tsum(g) / n
    return cfg.alpha * T.clamped_sqrt(mean_sq - cfg.lam * mean_g * mean_g)


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    log10: float
    silog: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int

    def as_dict(self) -> dict:
        return asdict(self)

    def summary_line(self) -> str:
        parts = []
        for f in fields(self):
            value = getattr(self, f.name)
            parts.append(f"{f.name}={value}" if f.name == "n_valid" else f"{f.name}={value:.6f}")
        return " ".join(parts)

    @classmethod
    def parse_line(cls, line: str) -> "MetricReport":
        values = dict(item.split("=", 1) for item in line.split())
        kwargs = {f.name: (int(values[f.name]) if f.name == "n_valid" else float(values[f.name])) for f in fields(cls)}
        return cls(**kwargs)


def _select(pred, gt, mask, d_min, d_max, crop):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ContractError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    valid = mask.copy()
    if crop is not None:
        top, bottom, left, right = crop
        region = np.zeros_like(valid)
        region[max(top, 0) : bottom, max(left, 0) : right] = True
        if not region.any():
            raise ContractError(f"crop {crop} does not intersect a {gt.shape} image")
        valid &= region
    if not valid.any():
        raise ContractError("no valid pixels inside the evaluation region")
    d = np.clip(pred[valid], d_min, d_max)
    t = gt[valid]
    if np.any(t <= 0) or np.any(d <= 0):
        raise NumericInputError("depth must be positive on valid pixels")
    return d, t


def _report(d: np.ndarray, t: np.ndarray) -> MetricReport:
    ratio = np.maximum(d / t, t / d)
    g = np.log(d) - np.log(t)
    diff = d - t
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / t)),
        sq_rel=float(np.mean(diff**2 / t)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        log10=float(np.mean(np.abs(np.log10(d) - np.log10(t)))),
        silog=float(100.0 * np.sqrt(max(np.mean(g**2) - np.mean(g) ** 2, 0.0))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        n_valid=int(d.size),
    )


def eval_metrics(pred, gt, mask, d_min: float, d_max: float, crop=None) -> MetricReport:
    """Metrics over masked pixels inside ``crop`` = (top, bottom, left, right), pixel rows/cols."""
    return _report(*_select(pred, gt, mask, d_min, d_max, crop))


def pooled_metrics(samples, d_min: float, d_max: float, crop=None) -> MetricReport:
    """Metrics over the union of pixels of several (pred, gt, mask) triples."""
    ds, ts = [], []
    for pred, gt, mask in samples:
        d, t = _select(pred, gt, mask, d_min, d_max, crop)
        ds.append(d)
        ts.append(t)
    if not ds:
        raise ContractError("no samples to evaluate")
    return _report(np.concatenate(ds), np.concatenate(ts))
