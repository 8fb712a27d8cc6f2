from dataclasses import replace

import numpy as np
import pytest

from skipdepth import tensor as T
from skipdepth.config import PRESETS, DataConfig, ModelConfig, TrainConfig
from skipdepth.model import DepthModel, load_model
from skipdepth.nn import Parameter
from skipdepth.train import AdamW, NonFiniteLoss, batch_order, linear_lr, read_loss_log, train

SMALL = ModelConfig(encoder_channels=(4, 8, 12, 16), stage_channels=(4, 8, 8, 16), heads=(1, 2, 2, 4), query_channels=8, bcp_hidden=8, n_bins=8)


def tiny(steps=3, precision="f64", seed=2, **train_kw):
    return replace(
        PRESETS["toy"],
        model=SMALL,
        train=TrainConfig(steps=steps, precision=precision, seed=seed, **train_kw),
        data=DataConfig(size=(192, 192), count=3),
    )


def test_linear_lr():
    assert linear_lr(1, 5, 1.0, 0.2) == 1.0
    assert abs(linear_lr(5, 5, 1.0, 0.2) - 0.2) < 1e-15
    assert abs(linear_lr(3, 5, 1.0, 0.2) - 0.6) < 1e-15
    assert linear_lr(1, 1, 0.3, 0.1) == 0.3


def test_batch_order_covers_each_epoch():
    batches = batch_order(0, 4, 6, 2)
    flat = [i for b in batches for i in b]
    assert sorted(flat[:4]) == sorted(flat[4:8]) == [0, 1, 2, 3]
    assert batches == batch_order(0, 4, 6, 2)


def test_adamw_first_step(f64):
    p = Parameter([1.0, -2.0])
    p.grad = np.array([0.5, -3.0])
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    opt.step()
    # bias-corrected first step moves each coordinate by lr * sign(g); decay is applied to the weight
    expected = np.array([1.0, -2.0]) * (1 - 0.1 * 0.5) - 0.1 * np.sign([0.5, -3.0])
    assert np.allclose(p.data, expected, atol=1e-7)


def test_zero_steps_saves_initialisation(tmp_path):
    cfg = tiny(steps=0, precision="f32")
    result = train(cfg, out_dir=tmp_path)
    assert result.losses == [] and read_loss_log(result.log_path) == []
    loaded, meta = load_model(result.checkpoint)
    with T.precision("f32"):
        fresh = DepthModel(SMALL, seed=cfg.train.seed)
    for a, b in zip(fresh.parameters(), loaded.parameters()):
        assert np.array_equal(a.data, b.data)
    assert meta["step"] == 0


def test_deterministic_logs_f64(tmp_path):
    a = train(tiny(), out_dir=tmp_path / "a")
    b = train(tiny(), out_dir=tmp_path / "b")
    assert a.log_path.read_text() == b.log_path.read_text()
    rows = read_loss_log(a.log_path)
    assert [r[0] for r in rows] == [1, 2, 3]
    assert rows[0][2] == 1e-3


def test_loss_decreases_quickly(tmp_path):
    r = train(tiny(steps=12, lr_start=3e-3, lr_end=3e-3, batch_size=3), out_dir=tmp_path)
    assert r.losses[-1] < r.losses[0]


def test_periodic_checkpoint(tmp_path):
    r = train(tiny(steps=4, checkpoint_every=2), out_dir=tmp_path)
    assert r.checkpoint.exists()
    assert load_model(r.checkpoint)[1]["step"] == 4


def test_non_finite_loss_dumps_batch(tmp_path, monkeypatch):
    import skipdepth.train as train_mod

    real = train_mod.sample_loss

    def broken(model, sample, cfg):
        loss = real(model, sample, cfg)
        return loss * float("nan")

    monkeypatch.setattr(train_mod, "sample_loss", broken)
    with pytest.raises(NonFiniteLoss, match="step 1"):
        train(tiny(), out_dir=tmp_path)
    dump = (tmp_path / "nonfinite_step1.txt").read_text()
    assert "synth_2_" in dump
