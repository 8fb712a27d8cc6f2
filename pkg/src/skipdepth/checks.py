"""Self-verification suite behind ``skipdepth check``.

``fast`` runs invariant and oracle checks plus finite-difference checks of
the primitive operations; ``full`` adds finite-difference checks of the
composed blocks.  Every gradient check runs in 64-bit mode.
"""
from __future__ import annotations

import math
import tempfile
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import RelativePositionBias, WindowGrid, window_partition, window_reverse, windowed_cross_attention
from .backbone import Encoder
from .bins import BinCenterPredictor, bin_centers, compose_depth, predict_bin_widths
from .config import ModelConfig
from .decoder import PixelQueryInit, SamBlock
from .fileio import load_checkpoint, read_pfm, read_png16, save_checkpoint, write_pfm, write_png16
from .gradcheck import grad_check
from .metrics import LossConfig, eval_metrics, silog_loss
from .model import DepthModel
from .nn import Parameter
from .reference import attention_loop, metrics_loop

GRAD_TOL = 1e-4
STEP = 1e-5
POINTS = 5


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


_REGISTRY: list[tuple[str, str, Callable[[], str]]] = []


def check(name: str, level: str = "fast"):
    def wrap(fn):
        _REGISTRY.append((name, level, fn))
        return fn

    return wrap


def _var(rng, *shape, scale=1.0) -> Parameter:
    return Parameter(rng.normal(0.0, scale, size=shape))


def _max_grad_error(f, points, **kw) -> float:
    return max(grad_check(f, p, STEP, **kw) for p in points)


def _assert_grad(label: str, err: float) -> str:
    if not err <= GRAD_TOL:
        raise AssertionError(f"{label}: max relative error {err:.3e} exceeds {GRAD_TOL:.0e}")
    return f"max rel err {err:.2e}"


def _grad_points(build: Callable[[np.random.Generator], tuple[Callable, list]], seed: int, **kw) -> float:
    """Worst error over ``POINTS`` random instances produced by ``build``."""
    worst = 0.0
    for i in range(POINTS):
        rng = np.random.default_rng(seed * 100 + i)
        f, points = build(rng)
        worst = max(worst, _max_grad_error(f, points, rng=rng, **kw))
    return worst


def _weighted(rng, shape):
    w = T.Tensor(rng.normal(size=shape))
    return lambda out: T.tsum(out * w)


# ----------------------------------------------------------------- primitive ops


def _op_builders():
    def matmul(rng):
        a, b = _var(rng, 2, 3, 4), _var(rng, 4, 5)
        s = _weighted(rng, (2, 3, 5))
        return (lambda _: s(T.matmul(a, b))), [a, b]

    def linear(rng):
        x, w, b = _var(rng, 3, 2, 4), _var(rng, 4, 3), _var(rng, 3)
        s = _weighted(rng, (3, 2, 3))
        return (lambda _: s(T.linear(x, w, b))), [x, w, b]

    def conv(rng):
        x, k, b = _var(rng, 5, 6, 2), _var(rng, 3, 3, 2, 3), _var(rng, 3)
        s1, s2 = _weighted(rng, (5, 6, 3)), _weighted(rng, (3, 3, 3))
        return (lambda _: s1(T.conv2d(x, k, b)) + s2(T.conv2d(x, k, b, stride=2))), [x, k, b]

    def softmax(rng):
        x = _var(rng, 3, 5)
        mask = np.ones((3, 5), dtype=bool)
        mask[1, 2:] = False
        s = _weighted(rng, (3, 5))
        return (lambda _: s(T.softmax(x, -1)) + s(T.softmax(x, -1, mask=mask))), [x]

    def layer_norm(rng):
        x, g, b = _var(rng, 4, 6), _var(rng, 6), _var(rng, 6)
        s = _weighted(rng, (4, 6))
        return (lambda _: s(T.layer_norm(x, g, b))), [x, g, b]

    def elementwise(rng):
        x = Parameter(rng.uniform(0.2, 2.0, size=(4, 3)) * rng.choice([-1, 1], size=(4, 3)))
        y = Parameter(rng.uniform(0.5, 2.0, size=(4, 3)))
        s = _weighted(rng, (4, 3))

        def f(_):
            out = T.gelu(x) + T.relu(x) + T.exp(x * 0.3) + T.log(y) + T.sqrt(y) + x / y + x**3 - T.neg(y) * x
            return s(out) + T.tsum(T.clamped_sqrt(y))

        return f, [x, y]

    def pooling(rng):
        x = _var(rng, 7, 7, 3)
        s1, s2, s3 = _weighted(rng, (3,)), _weighted(rng, (3, 2, 3)), _weighted(rng, (10, 9, 3))
        s4 = _weighted(rng, (14, 14, 3))

        def f(_):
            out = s1(T.global_avg_pool(x)) + s2(T.adaptive_avg_pool(x, (3, 2))) + s3(T.bilinear_resize(x, (10, 9)))
            return out + s4(T.bilinear_upsample(x, 2)) - T.mean(x * x)

        return f, [x]

    def layout(rng):
        x = _var(rng, 4, 4, 8)
        t = _var(rng, 9, 2)
        idx = rng.integers(0, 9, size=(3, 3))
        s1, s2 = _weighted(rng, (8, 8, 2)), _weighted(rng, (3, 3, 2))
        s3 = _weighted(rng, (2, 8, 8))
        s4 = _weighted(rng, (2, 2, 32))

        def f(_):
            shuffled = T.pixel_shuffle(x, 2)
            joined = T.concat([T.transpose(x[:2], (0, 2, 1)), T.reshape(T.pad(x[2:, :1], ((0, 0), (0, 3), (0, 0))), (2, 8, 4))], axis=-1)
            return s1(shuffled) + s2(T.take(t, idx)) + s3(joined) + T.tsum(T.cumsum(t, 0) * t) + s4(T.pixel_unshuffle(x, 2))

        return f, [x, t]

    def attention(rng):
        grid = WindowGrid(8, 9, 7)
        q, k, v = _var(rng, 8, 9, 4), _var(rng, 8, 9, 4), _var(rng, 8, 9, 4)
        rpb = RelativePositionBias(7, 2, rng)
        rpb.table.data = rng.normal(0, 0.5, size=rpb.table.shape)
        s = _weighted(rng, (8, 9, 4))
        return (lambda _: s(windowed_cross_attention(q, k, v, rpb, 2, grid))), [q, k, v, rpb.table]

    return {
        "matmul": matmul,
        "linear": linear,
        "conv2d": conv,
        "softmax": softmax,
        "layer_norm": layer_norm,
        "elementwise": elementwise,
        "pooling": pooling,
        "layout": layout,
        "window_attention": attention,
    }


def _register_op_checks():
    for i, (name, build) in enumerate(_op_builders().items()):

        def run(build=build, i=i, name=name):
            with T.precision("f64"):
                return _assert_grad(name, _grad_points(build, seed=i + 1, max_coords=60))

        check(f"grad:{name}", "fast")(run)


_register_op_checks()


# ---------------------------------------------------------------- composed blocks


def _sam_instance(rng, final_residual="literal"):
    block = SamBlock(6, 5, 8, 2, 7, rng, final_residual)
    for p in (block.norm_q.gamma, block.norm_e.gamma, block.norm_q.beta, block.norm_e.beta, block.rpb.table):
        p.data = p.data + rng.normal(0, 0.3, size=p.shape)
    qhat, e = _var(rng, 9, 8, 6), _var(rng, 9, 8, 5)
    return block, qhat, e


@check("grad:sam_block", "full")
def _grad_sam():
    def build(rng):
        block, qhat, e = _sam_instance(rng)
        s = _weighted(rng, (9, 8, 8))
        return (lambda _: s(block(qhat, e))), [block.w_q.weight, block.w_k.weight, block.rpb.table, block.conv_q.weight, qhat, e]

    with T.precision("f64"):
        return _assert_grad("sam_block", _grad_points(build, seed=11, max_coords=40))


@check("grad:pqi_init", "full")
def _grad_pqi():
    def build(rng):
        module = PixelQueryInit(3, 4, rng)
        e4 = _var(rng, 7, 8, 3)
        s = _weighted(rng, (7, 8, 4))
        return (lambda _: s(module(e4))), [e4, module.fuse.weight]

    with T.precision("f64"):
        return _assert_grad("pqi_init", _grad_points(build, seed=12, max_coords=40))


def _smooth_bcp(rng, cin=6, n_bins=8):
    """A bin predictor whose raw outputs stay clear of the relu kink."""
    while True:
        bcp = BinCenterPredictor(cin, 10, n_bins, rng)
        q = _var(rng, 7, 7, cin)
        with T.no_grad():
            raw = bcp(q).data
        if np.min(np.abs(raw)) > 1e-3:
            return bcp, q


@check("grad:bins_compose", "full")
def _grad_bins():
    def build(rng):
        bcp, q = _smooth_bcp(rng)
        probs = T.softmax(T.Tensor(rng.normal(size=(4, 5, 8))), -1)

        def f(_):
            spec = predict_bin_widths(q, bcp, 1e-3, 10.0)
            return T.tsum(compose_depth(probs, spec.centers) * probs.data[..., 0])

        return f, [bcp.mlp.fc1.weight, bcp.mlp.fc2.weight, bcp.mlp.fc2.bias, q]

    with T.precision("f64"):
        return _assert_grad("bins_compose", _grad_points(build, seed=13, max_coords=40))


@check("grad:silog_loss", "full")
def _grad_silog():
    def build(rng):
        pred = Parameter(rng.uniform(1.0, 5.0, size=(6, 7)))
        gt = rng.uniform(1.0, 5.0, size=(6, 7))
        mask = rng.random((6, 7)) > 0.2
        return (lambda _: silog_loss(pred, gt, mask, LossConfig())), [pred]

    with T.precision("f64"):
        return _assert_grad("silog_loss", _grad_points(build, seed=14))


def _tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        encoder_channels=(4, 6, 8, 10),
        stage_channels=(4, 8, 8, 8),
        heads=(1, 2, 2, 2),
        query_channels=8,
        bcp_hidden=8,
        n_bins=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


@check("grad:full_forward", "full")
def _grad_full():
    def build(rng):
        while True:
            model = DepthModel(_tiny_model_config(), seed=int(rng.integers(1 << 30)))
            image = T.Tensor(rng.uniform(0, 1, size=(192, 192, 3)))
            with T.no_grad():
                pred = model(image)
                raw = model.bcp(pred.queries).data
            if np.min(np.abs(raw)) > 1e-3:
                break
        gt = rng.uniform(1.0, 9.0, size=(48, 48))
        mask = np.ones((48, 48), dtype=bool)
        return (lambda _: silog_loss(model(image).depth, gt, mask)), [
            model.encoder.stage1.conv1.weight,
            model.decoder.sam4.w_q.weight,
            model.decoder.sam1.rpb.table,
            model.bcp.mlp.fc2.weight,
        ]

    with T.precision("f64"):
        return _assert_grad("full_forward", _grad_points(build, seed=15, max_coords=6))


@check("grad:encoder_stage4", "full")
def _grad_encoder():
    def build(rng):
        enc = Encoder((4, 6, 8, 10), rng)
        image = T.Tensor(rng.uniform(0, 1, size=(64, 64, 3)))
        s = _weighted(rng, (2, 2, 10))
        return (lambda _: s(enc(image).e4)), [enc.stage4.conv1.weight, enc.stage4.conv2.weight]

    with T.precision("f64"):
        return _assert_grad("encoder_stage4", _grad_points(build, seed=16, max_coords=30))


# -------------------------------------------------------------- invariants


@check("softmax:rows_and_shift")
def _softmax_rows():
    with T.precision("f64"):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 11)) * 5
        p = T.softmax(T.Tensor(x), -1).data
        shifted = T.softmax(T.Tensor(x + 37.5), -1).data
        assert np.max(np.abs(p.sum(-1) - 1)) <= 1e-6, "softmax rows do not sum to 1"
        assert np.max(np.abs(p - shifted)) <= 1e-12, "softmax is not shift invariant"
    return "rows sum to 1, shift invariant"


@check("pixel_shuffle:round_trip")
def _shuffle_round_trip():
    x = np.random.default_rng(1).normal(size=(5, 3, 12))
    back = T.pixel_unshuffle(T.pixel_shuffle(T.Tensor(x, dtype=np.float64), 2), 2).data
    assert np.array_equal(back, x), "pixel_unshuffle(pixel_shuffle(x)) != x"
    return "exact"


@check("adaptive_pool:identity")
def _pool_identity():
    with T.precision("f64"):
        x = T.Tensor(np.random.default_rng(2).normal(size=(6, 5, 3)))
        assert np.allclose(T.adaptive_avg_pool(x, (6, 5)).data, x.data, atol=1e-12)
        assert np.allclose(T.adaptive_avg_pool(x, (1, 1)).data.reshape(-1), T.global_avg_pool(x).data, atol=1e-12)
    return "full size is identity, 1x1 equals global pool"


@check("window:round_trip")
def _window_round_trip():
    rng = np.random.default_rng(3)
    extents = (7, 8, 13, 14, 21, 28)
    for h in extents:
        for w in extents:
            x = rng.normal(size=(h, w, 2))
            grid = WindowGrid(h, w, 7)
            back = window_reverse(window_partition(T.Tensor(x, dtype=np.float64), grid), grid).data
            assert np.array_equal(back, x), f"window round trip failed for {h}x{w}"
    return f"{len(extents) ** 2} extents exact"


@check("attention:oracle")
def _attention_oracle():
    worst = 0.0
    with T.precision("f64"):
        for i, (h, w, heads) in enumerate([(7, 7, 1), (8, 8, 2), (14, 7, 2), (9, 15, 4)]):
            rng = np.random.default_rng(40 + i)
            q, k, v = (rng.normal(size=(h, w, 8)) for _ in range(3))
            rpb = RelativePositionBias(7, heads, rng)
            out = windowed_cross_attention(T.Tensor(q), T.Tensor(k), T.Tensor(v), rpb, heads, WindowGrid(h, w, 7)).data
            ref = attention_loop(q, k, v, rpb().data, heads, 7)
            worst = max(worst, float(np.max(np.abs(out - ref))))
    assert worst <= 1e-6, f"attention differs from loop reference by {worst:.2e}"
    return f"max abs diff {worst:.1e}"


@check("bins:monotone")
def _bins_monotone():
    rng = np.random.default_rng(5)
    with T.precision("f64"):
        c = bin_centers(T.Tensor([0.25] * 4), 0.0, 8.0).data
        assert np.array_equal(c, [1.0, 3.0, 5.0, 7.0]), f"uniform centres wrong: {c}"
        for _ in range(100):
            b = rng.uniform(1e-3, 1.0, size=16)
            b /= b.sum()
            c = bin_centers(T.Tensor(b), 0.5, 9.0).data
            assert np.all(np.diff(c) > 0) and c[0] > 0.5 and c[-1] < 9.0, "centres not strictly increasing inside range"
            p = rng.dirichlet(np.ones(16), size=(3, 4))
            d = compose_depth(T.Tensor(p), T.Tensor(c)).data
            assert np.all(d >= c[0]) and np.all(d <= c[-1]), "composed depth escapes [c_1, c_n]"
    return "100 random width vectors"


@check("silog:hand_case")
def _silog_hand():
    with T.precision("f64"):
        pred = T.Tensor([[math.e, 1.0]])
        value = float(silog_loss(pred, np.ones((1, 2)), np.ones((1, 2), dtype=bool)).data)
    expected = 10.0 * math.sqrt(0.2875)
    assert abs(value - expected) <= 1e-9, f"silog {value} != {expected}"
    return f"{value:.10f}"


@check("metrics:oracle")
def _metrics_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(5):
        gt = rng.uniform(0.5, 10.0, size=(9, 11))
        pred = gt * rng.uniform(0.6, 1.6, size=gt.shape)
        mask = rng.random(gt.shape) > 0.3
        rep = eval_metrics(pred, gt, mask, 1e-3, 10.0).as_dict()
        ref = metrics_loop(pred, gt, mask, 1e-3, 10.0)
        worst = max(worst, max(abs(rep[k] - ref[k]) for k in ref))
    assert worst <= 1e-9, f"metrics differ from loop reference by {worst:.2e}"
    return f"max abs diff {worst:.1e}"


@check("io:round_trips")
def _io_round_trips():
    rng = np.random.default_rng(7)
    depth = rng.uniform(0.1, 80.0, size=(13, 17)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        write_pfm(tmp / "d.pfm", depth)
        assert np.array_equal(read_pfm(tmp / "d.pfm"), depth), "PFM round trip not exact"
        write_png16(tmp / "d.png", depth)
        err = float(np.max(np.abs(read_png16(tmp / "d.png") - depth)))
        assert err <= 1 / 512 + 1e-6, f"png16 error {err} exceeds half a quantum"
        params = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=5).astype(np.float32)}
        save_checkpoint(tmp / "m.ckpt", params)
        _, loaded = load_checkpoint(tmp / "m.ckpt")
        assert all(np.array_equal(loaded[k], v) for k, v in params.items()), "checkpoint round trip not bit exact"
    return "pfm exact, png16 within 1/512 m, checkpoint bit exact"


# ---------------------------------------------------------------------- runner


def run_checks(level: str = "fast", names: list[str] | None = None) -> list[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError(f"unknown check level {level!r}")
    results = []
    previous = T.get_precision()
    for name, lvl, fn in _REGISTRY:
        if lvl == "full" and level != "full":
            continue
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        try:
            detail = fn() or ""
            ok = True
        except Exception as exc:  # report content, never a crash
            detail = f"{type(exc).__name__}: {exc}"
            if not isinstance(exc, AssertionError):
                detail += "\n" + traceback.format_exc(limit=3)
            ok = False
        finally:
            T.set_precision(previous)
        results.append(CheckResult(name, ok, detail, time.perf_counter() - start))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        lines.append(f"{status} {r.name} ({r.seconds:.2f}s): {r.detail.splitlines()[0] if r.detail else ''}")
    failed = [r.name for r in results if not r.ok]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failing: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)
