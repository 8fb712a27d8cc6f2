"""Optimisation loop: decoupled-weight-decay Adam with a linear learning-rate ramp."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import DepthSample, load_list, synth_dataset
from .metrics import LossConfig, silog_loss
from .model import DepthModel, save_model
from .nn import Parameter

log = logging.getLogger(__name__)


class AdamW:
    def __init__(self, params: list[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def linear_lr(step: int, total: int, start: float, end: float) -> float:
    """Learning rate for 1-based ``step`` of ``total``, decaying linearly from start to end."""
    if total <= 1:
        return start
    return start + (end - start) * (step - 1) / (total - 1)


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: DepthModel
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    checkpoint: Path | None = None
    log_path: Path | None = None


def load_samples(cfg: RunConfig) -> list[DepthSample]:
    d = cfg.data
    if d.source == "synthetic":
        return synth_dataset(cfg.train.seed, d.count, tuple(d.size), cfg.model.d_min, cfg.model.d_max)
    return load_list(d.list_file, cfg.model.d_max)


def batch_order(seed: int, n_samples: int, steps: int, batch_size: int) -> list[list[int]]:
    """Sample indices per step, reshuffled every epoch."""
    rng = np.random.default_rng(seed + 7919)
    order: list[int] = []
    batches = []
    for _ in range(steps):
        batch = []
        for _ in range(min(batch_size, n_samples)):
            if not order:
                order = list(rng.permutation(n_samples))
            batch.append(int(order.pop(0)))
        batches.append(batch)
    return batches


def sample_loss(model: DepthModel, sample: DepthSample, loss_cfg: LossConfig):
    pred = model.predict_full(sample.image)
    return silog_loss(pred, sample.depth, sample.mask, loss_cfg)


def train(cfg: RunConfig, samples: list[DepthSample] | None = None, out_dir=None, loss_cfg: LossConfig = LossConfig()) -> TrainResult:
    """Train from scratch; writes ``train.log`` ("step loss lr") and the checkpoint under ``out_dir``."""
    cfg = cfg.validate()
    t = cfg.train
    with T.precision(t.precision):
        samples = samples if samples is not None else load_samples(cfg)
        model = DepthModel(cfg.model, seed=t.seed)
        opt = AdamW(model.parameters(), t.lr_start, weight_decay=t.weight_decay)
        result = TrainResult(model)
        out = Path(out_dir if out_dir is not None else cfg.io.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = Path(cfg.io.checkpoint)
        ckpt = ckpt if ckpt.is_absolute() else out / ckpt
        log_path = out / "train.log"
        with open(log_path, "w", encoding="utf-8") as log_fh:
            for step, batch in enumerate(batch_order(t.seed, len(samples), t.steps, t.batch_size), 1):
                lr = linear_lr(step, t.steps, t.lr_start, t.lr_end)
                opt.lr = lr
                model.zero_grad()
                total = 0.0
                for idx in batch:
                    loss = sample_loss(model, samples[idx], loss_cfg)
                    value = float(loss.data)
                    if not math.isfinite(value):
                        dump = out / f"nonfinite_step{step}.txt"
                        dump.write_text(f"step {step} batch {[samples[i].id for i in batch]} offending {samples[idx].id}\n")
                        raise NonFiniteLoss(f"non-finite loss at step {step} on sample {samples[idx].id}")
                    T.backward(loss * (1.0 / len(batch)))
                    total += value
                opt.step()
                mean_loss = total / len(batch)
                result.losses.append(mean_loss)
                result.lrs.append(lr)
                log_fh.write(f"{step} {mean_loss:.9g} {lr:.9g}\n")
                log_fh.flush()
                if step % 50 == 0 or step == 1:
                    log.info("step %d loss %.5f lr %.3g", step, mean_loss, lr)
                if t.checkpoint_every and step % t.checkpoint_every == 0 and step != t.steps:
                    save_model(ckpt, model, {"step": step})
        save_model(ckpt, model, {"step": t.steps})
    result.checkpoint = ckpt
    result.log_path = log_path
    return result


def read_loss_log(path) -> list[tuple[int, float, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            step, loss, lr = line.split()
            rows.append((int(step), float(loss), float(lr)))
    return rows
