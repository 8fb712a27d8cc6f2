import numpy as np
import pytest

from skipdepth import tensor as T
from skipdepth.backbone import FeaturePyramid
from skipdepth.decoder import (
    PAPER_STAGES,
    ConvFusion,
    Decoder,
    PixelQueryInit,
    SamBlock,
    StageConfig,
    decode,
    fuse_baseline,
    pqi_init,
    sam_block,
)
from skipdepth.errors import ConfigError, ContractError, DimensionError
from skipdepth.gradcheck import grad_check
from skipdepth.nn import Conv3x3
from skipdepth.tensor import Tensor

TOY = StageConfig((8, 16, 16, 32), (2, 2, 4, 4), 7)
ENC = (6, 10, 14, 18)


def _pyramid(rng, size=(224, 224), channels=ENC):
    h, w = size
    return FeaturePyramid(*(Tensor(rng.normal(size=(h // f, w // f, c))) for f, c in zip((4, 8, 16, 32), channels)))


def _zero_except_convs(block):
    for name, p in block.named_parameters():
        if not name.startswith(("conv_q", "conv_e")):
            p.data[...] = 0.0


class TestPqi:
    def test_shape(self, rng):
        out = pqi_init(Tensor(rng.normal(size=(7, 7, 8))), PixelQueryInit(8, 12, rng))
        assert out.shape == (7, 7, 12)

    def test_constant_input_constant_interior(self, rng, f64):
        e4 = Tensor(np.full((9, 9, 3), 0.7))
        out = PixelQueryInit(3, 4, rng)(e4).data
        interior = out[1:-1, 1:-1]
        assert np.allclose(interior, interior[0, 0], atol=1e-12)

    def test_too_small(self, rng):
        with pytest.raises(ContractError):
            PixelQueryInit(3, 4, rng)(Tensor(np.zeros((5, 7, 3))))

    def test_gradient(self, rng, f64):
        m = PixelQueryInit(3, 4, rng)
        x = Tensor(rng.normal(size=(7, 7, 3)))
        w = Tensor(rng.normal(size=(7, 7, 4)))
        assert grad_check(lambda p: T.tsum(m(x) * w), m.fuse.weight, 1e-5, max_coords=40, rng=rng) <= 1e-4


class TestSam:
    def test_zero_parameters_pass_through(self, rng, f64):
        block = SamBlock(5, 6, 8, 2, 7, rng)
        _zero_except_convs(block)
        qhat, e = Tensor(rng.normal(size=(8, 8, 5))), Tensor(rng.normal(size=(8, 8, 6)))
        q_in, e_in = block.project(qhat, e)
        assert np.allclose(sam_block(qhat, e, block).data, q_in.data + e_in.data, atol=1e-14)

    def test_fully_zero_block_is_zero(self, rng):
        block = SamBlock(5, 6, 8, 2, 7, rng)
        for p in block.parameters():
            p.data[...] = 0.0
        out = block(Tensor(rng.normal(size=(7, 7, 5))), Tensor(rng.normal(size=(7, 7, 6))))
        assert not out.data.any()

    def test_alternative_residual_differs(self, rng, f64):
        a = SamBlock(4, 4, 8, 2, 7, np.random.default_rng(0))
        b = SamBlock(4, 4, 8, 2, 7, np.random.default_rng(0), final_residual="alternative")
        qhat, e = Tensor(rng.normal(size=(7, 7, 4))), Tensor(rng.normal(size=(7, 7, 4)))
        assert a(qhat, e).shape == b(qhat, e).shape == (7, 7, 8)
        assert not np.allclose(a(qhat, e).data, b(qhat, e).data)

    @pytest.mark.parametrize("i", range(4))
    def test_stage_shapes(self, i, rng):
        d, h = TOY.channels[i], TOY.heads[i]
        block = SamBlock(3, 5, d, h, 7, rng)
        with T.no_grad():
            assert block(Tensor(np.ones((9, 11, 3))), Tensor(np.ones((9, 11, 5)))).shape == (9, 11, d)

    def test_misaligned(self, rng):
        block = SamBlock(3, 5, 8, 2, 7, rng)
        with pytest.raises(DimensionError):
            block(Tensor(np.ones((7, 7, 3))), Tensor(np.ones((14, 14, 5))))

    def test_gradient_wq(self, rng, f64):
        block = SamBlock(3, 4, 8, 2, 7, rng)
        qhat, e = Tensor(rng.normal(size=(8, 8, 3))), Tensor(rng.normal(size=(8, 8, 4)))
        w = Tensor(rng.normal(size=(8, 8, 8)))
        assert grad_check(lambda p: T.tsum(block(qhat, e) * w), block.w_q.weight, 1e-5, rng=rng) <= 1e-4

    def test_bad_residual(self, rng):
        with pytest.raises(ConfigError):
            SamBlock(3, 4, 8, 2, 7, rng, final_residual="other")


class TestBaselines:
    def test_add_conv_identity_kernel(self, rng, f64):
        conv = Conv3x3(4, 4, rng)
        conv.weight.data[...] = 0.0
        conv.weight.data[1, 1] = np.eye(4)
        qhat = Tensor(rng.normal(size=(5, 6, 4)))
        assert np.array_equal(fuse_baseline(qhat, Tensor(np.zeros((5, 6, 4))), "add_conv", conv).data, qhat.data)

    def test_add_conv_commutes(self, rng, f64):
        conv = Conv3x3(4, 4, rng)
        a, b = Tensor(rng.normal(size=(5, 6, 4))), Tensor(rng.normal(size=(5, 6, 4)))
        assert np.array_equal(fuse_baseline(a, b, "add_conv", conv).data, fuse_baseline(b, a, "add_conv", conv).data)

    def test_cat_conv_shape(self, rng):
        m = ConvFusion(3, 5, 8, "cat_conv", rng)
        assert m(Tensor(np.ones((7, 7, 3))), Tensor(np.ones((7, 7, 5)))).shape == (7, 7, 8)

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigError):
            fuse_baseline(Tensor(np.ones((2, 2, 2))), Tensor(np.ones((2, 2, 2))), "mul_conv", Conv3x3(2, 2, rng))

    def test_misaligned(self, rng):
        m = ConvFusion(3, 5, 8, "add_conv", rng)
        with pytest.raises(DimensionError):
            m(Tensor(np.ones((7, 7, 3))), Tensor(np.ones((7, 8, 5))))


class TestDecoder:
    @pytest.mark.parametrize("fusion", ["sam", "add_conv", "cat_conv"])
    def test_shape_and_normalised(self, fusion, rng):
        dec = Decoder(ENC, 12, TOY, 10, np.random.default_rng(0), fusion=fusion)
        pyr = _pyramid(rng)
        with T.no_grad():
            probs = decode(pyr, Tensor(rng.normal(size=(7, 7, 12))), dec).data
        assert probs.shape == (56, 56, 10)
        assert np.all(probs >= 0)
        assert np.max(np.abs(probs.sum(-1) - 1)) <= 1e-6

    def test_fusions_differ_in_values_only(self, rng):
        pyr, q = _pyramid(rng), Tensor(rng.normal(size=(7, 7, 12)))
        with T.no_grad():
            outs = [Decoder(ENC, 12, TOY, 10, np.random.default_rng(0), fusion=f)(pyr, q).data for f in ("sam", "add_conv", "cat_conv")]
        assert len({o.shape for o in outs}) == 1
        assert not np.allclose(outs[0], outs[1])

    def test_paper_scale_head(self, rng):
        dec = Decoder((192, 384, 768, 1536), 512, PAPER_STAGES, 256, np.random.default_rng(0))
        pyr = _pyramid(rng, channels=(192, 384, 768, 1536))
        with T.no_grad():
            assert dec(pyr, Tensor(rng.normal(size=(7, 7, 512)))).shape == (56, 56, 256)

    def test_zero_sam_parameters_deterministic_baseline(self, rng):
        dec = Decoder(ENC, 12, TOY, 10, np.random.default_rng(0))
        for i in (1, 2, 3, 4):
            _zero_except_convs(getattr(dec, f"sam{i}"))
        pyr, q = _pyramid(rng), Tensor(rng.normal(size=(7, 7, 12)))
        with T.no_grad():
            a = dec.logits(pyr, q).data
            q2 = Tensor(rng.normal(size=(7, 7, 12)))
            b = dec.logits(pyr, q2).data
        assert np.array_equal(a, dec.logits(pyr, q).data)
        assert a.shape == b.shape

    def test_stage_mismatch(self, rng):
        dec = Decoder(ENC, 12, TOY, 10, rng)
        pyr = _pyramid(rng)
        with pytest.raises(ConfigError):
            dec(pyr._replace(e2=Tensor(np.ones((14, 14, ENC[1])))), Tensor(np.ones((7, 7, 12))))

    def test_unknown_fusion(self, rng):
        with pytest.raises(ConfigError):
            Decoder(ENC, 12, TOY, 10, rng, fusion="concat")

    def test_stage_config_validation(self):
        with pytest.raises(ConfigError):
            StageConfig((8, 16, 16, 30), (2, 2, 4, 4))
        with pytest.raises(ConfigError):
            StageConfig((8, 16, 16, 32), (3, 2, 4, 4))

    def test_logit_gradient_reaches_backbone(self, f64):
        from skipdepth.backbone import Encoder

        rng = np.random.default_rng(5)
        enc = Encoder((3, 4, 5, 6), rng)
        stages = StageConfig((4, 4, 4, 8), (1, 1, 1, 2), 7)
        pqi = PixelQueryInit(6, 8, rng)
        dec = Decoder((3, 4, 5, 6), 8, stages, 5, rng)
        image = Tensor(rng.normal(size=(192, 192, 3)))

        def f(_):
            pyr = enc(image)
            return T.tsum(dec.logits(pyr, pqi(pyr.e4)))

        assert grad_check(f, enc.stage1.conv1.weight, 1e-5, max_coords=6, rng=rng) <= 1e-4
