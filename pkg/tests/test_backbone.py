import numpy as np
import pytest

from skipdepth import tensor as T
from skipdepth.backbone import Encoder, encode
from skipdepth.errors import ConfigError, ContractError
from skipdepth.gradcheck import grad_check
from skipdepth.tensor import Tensor


def test_pyramid_shapes():
    enc = Encoder([32, 64, 128, 256], np.random.default_rng(0))
    with T.no_grad():
        pyr = encode(Tensor(np.zeros((224, 224, 3))), enc)
    assert [p.shape for p in pyr] == [(56, 56, 32), (28, 28, 64), (14, 14, 128), (7, 7, 256)]


@pytest.mark.parametrize("size", [(32, 32), (64, 96), (160, 32)])
def test_shapes_for_any_32_multiple(size):
    enc = Encoder([4, 8, 12, 16], np.random.default_rng(0))
    with T.no_grad():
        pyr = enc(Tensor(np.ones(size + (3,))))
    h, w = size
    for level, (p, c) in enumerate(zip(pyr, [4, 8, 12, 16])):
        f = 4 * 2**level
        assert p.shape == (h // f, w // f, c)


def test_zero_input_zero_bias_gives_zero():
    enc = Encoder([4, 8, 12, 16], np.random.default_rng(0))
    with T.no_grad():
        pyr = enc(Tensor(np.zeros((64, 64, 3))))
    assert all(not p.data.any() for p in pyr)


def test_deterministic():
    a = Encoder([4, 8, 12, 16], np.random.default_rng(3))
    b = Encoder([4, 8, 12, 16], np.random.default_rng(3))
    x = Tensor(np.random.default_rng(1).random((64, 64, 3)))
    with T.no_grad():
        assert all(np.array_equal(p.data, q.data) for p, q in zip(a(x), b(x)))


def test_indivisible_input():
    enc = Encoder([4, 8, 12, 16], np.random.default_rng(0))
    with pytest.raises(ContractError):
        enc(Tensor(np.zeros((48, 64, 3))))


@pytest.mark.parametrize("channels", [[4, 8, 8, 16], [4, 8, 16]])
def test_bad_channels(channels):
    with pytest.raises(ConfigError):
        Encoder(channels, np.random.default_rng(0))


def test_stage4_gradient(f64):
    enc = Encoder([2, 3, 4, 5], np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(64, 64, 3)))
    err = grad_check(lambda p: T.tsum(enc(x).e4), enc.stage4.conv2.weight, 1e-5, max_coords=40, rng=np.random.default_rng(2))
    assert err <= 1e-4
