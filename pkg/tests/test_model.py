import dataclasses

import numpy as np
import pytest

from retinex_ssm.attention import FusionMode
from retinex_ssm.autodiff import Tensor, finite_diff_grad, rel_l2
from retinex_ssm.errors import ConfigError, DimensionError
from retinex_ssm.illumination import IEWeights, ie_forward, illumination_prior
from retinex_ssm.layers import ParamFactory, iter_params
from retinex_ssm.model import (
    IFSSMWeights,
    ModelConfig,
    apply_variant,
    build_flu_pyramid,
    build_model,
    census,
    d_state_trace,
    ifssm_forward,
    ifvm_forward,
    model_forward,
    param_census,
)

from conftest import grad_of


def zero_all(obj):
    for p in iter_params(obj):
        p.data[...] = 0.0


class TestIllumination:
    def test_prior_pixel_mean(self):
        img = Tensor(np.array([0.2, 0.4, 0.6], dtype=np.float64).reshape(1, 3, 1, 1))
        assert illumination_prior(img).data.item() == pytest.approx(0.4)

    def test_prior_black_and_constant(self):
        assert not illumination_prior(Tensor(np.zeros((1, 3, 4, 4)))).data.any()
        np.testing.assert_allclose(illumination_prior(Tensor(np.full((2, 3, 2, 2), 0.3))).data, 0.3)

    def test_prior_shape_and_channel_check(self):
        assert illumination_prior(Tensor(np.zeros((2, 3, 5, 6)))).shape == (2, 1, 5, 6)
        with pytest.raises(DimensionError, match="channel"):
            illumination_prior(Tensor(np.zeros((1, 4, 2, 2))))

    def test_unit_map_passes_image(self, rng):
        w = IEWeights.build(ParamFactory(rng), 8)
        w.conv_out.w.data[:] = 0.0
        w.conv_out.b.data[:] = 1.0
        img = Tensor(rng.uniform(size=(1, 3, 6, 6)).astype(np.float32))
        lit, _, illum = ie_forward(img, illumination_prior(img), w)
        np.testing.assert_array_equal(lit.data, img.data)
        np.testing.assert_array_equal(illum.data, 1.0)

    def test_default_shapes(self, rng):
        w = IEWeights.build(ParamFactory(rng))
        img = Tensor(rng.uniform(size=(1, 3, 64, 64)).astype(np.float32))
        lit, feats, illum = ie_forward(img, illumination_prior(img), w)
        assert feats.shape == (1, 40, 64, 64)
        assert lit.shape == illum.shape == (1, 3, 64, 64)
        assert w.conv_dw.groups == 40 and w.conv_dw.w.shape == (40, 1, 5, 5)

    def test_zero_image_zero_bias(self, rng):
        w = IEWeights.build(ParamFactory(rng), 4)
        for conv in (w.conv_fuse, w.conv_dw, w.conv_out):
            conv.b.data[:] = 0.0
        img = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
        lit, _, _ = ie_forward(img, illumination_prior(img), w)
        assert not lit.data.any()

    def test_lit_up_recomputation(self, rng):
        w = IEWeights.build(ParamFactory(rng), 6)
        img = Tensor(rng.uniform(size=(2, 3, 5, 5)).astype(np.float32))
        lit, feats, _ = ie_forward(img, illumination_prior(img), w)
        np.testing.assert_array_equal(lit.data, img.data * w.conv_out(feats).data)

    def test_prior_spatial_mismatch(self, rng):
        w = IEWeights.build(ParamFactory(rng), 4)
        with pytest.raises(DimensionError, match="spatial"):
            ie_forward(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 1, 4, 5))), w)

    def test_gradcheck(self, rng):
        w = IEWeights.build(ParamFactory(rng), 4)
        for p in iter_params(w):
            p.data = p.data.astype(np.float64)
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        proj = rng.standard_normal((1, 3, 8, 8))

        def fn():
            return ie_forward(img, illumination_prior(img), w)[0]

        leaves = [img, w.conv_fuse.w, w.conv_dw.w, w.conv_out.b]
        for leaf, g in zip(leaves, grad_of(fn, *leaves, proj=proj)):
            assert rel_l2(g, finite_diff_grad(lambda _: float(np.sum(fn().data * proj)), leaf.data, h=1e-5)) < 1e-3


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.n_feat, cfg.levels, cfg.d_state_base, cfg.heads_base_width) == (40, 2, 16, 40)
        assert [cfg.heads(l) for l in range(3)] == [1, 2, 4]

    def test_levels_fixed(self):
        with pytest.raises(ConfigError):
            ModelConfig(levels=3)

    def test_heads_width_divides(self):
        with pytest.raises(ConfigError):
            ModelConfig(n_feat=30, heads_base_width=40)

    def test_fusion_string_coerced(self):
        assert ModelConfig(fusion="igmsa").fusion is FusionMode.IGMSA

    @pytest.mark.parametrize("variant,field,value", [
        ("fixedhs", "d_state_fixed", True),
        ("nofb", "fusion", FusionMode.ELEMENTWISE),
        ("noss2d", "ss2d_enabled", False),
        ("igmsa", "fusion", FusionMode.IGMSA),
    ])
    def test_variants(self, variant, field, value):
        assert getattr(apply_variant(ModelConfig(), variant), field) == value

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            apply_variant(ModelConfig(), "nope")


class TestStructure:
    def test_names_unique_and_seeded(self):
        w1, w2 = build_model(ModelConfig(seed=3)), build_model(ModelConfig(seed=3))
        names = [p.name for p in w1.params()]
        assert len(names) == len(set(names))
        assert all(np.array_equal(a.data, b.data) for a, b in zip(w1.params(), w2.params()))
        assert "ifvm.enc0.ifa.wq.w" in names

    def test_five_blocks(self):
        names = census(build_model(ModelConfig(n_feat=8, heads_base_width=8)))
        blocks = {n.split(".")[1] for n in names if n.endswith(".ln1.gamma")}
        assert blocks == {"enc0", "enc1", "bottleneck", "dec0", "dec1"}

    def test_channel_schedule(self):
        names = census(build_model(ModelConfig()))
        assert names["ifvm.enc0.ln1.gamma"] == (40,)
        assert names["ifvm.enc1.ln1.gamma"] == (80,)
        assert names["ifvm.bottleneck.ln1.gamma"] == (160,)
        assert names["ifvm.enc0.down.w"] == (80, 40, 4, 4)
        assert names["ifvm.dec0.up.w"] == (80, 40, 2, 2)
        assert names["ifvm.dec1.fuse.w"] == (80, 160, 1, 1)
        assert names["ifvm.embed.w"] == (40, 3, 3, 3)
        assert names["ifvm.bottleneck.ffn_in.w"] == (640, 160, 1, 1)

    def test_pyramid_in_census(self):
        names = census(build_model(ModelConfig()))
        flu = {n: s for n, s in names.items() if n.startswith("ifvm.flu")}
        assert flu == {"ifvm.flu1.w": (80, 40, 4, 4), "ifvm.flu1.b": (80,), "ifvm.flu2.w": (160, 80, 4, 4), "ifvm.flu2.b": (160,)}

    def test_d_state_traces(self):
        assert d_state_trace(build_model(ModelConfig(n_feat=8, heads_base_width=8))) == [16, 32, 64]
        assert d_state_trace(build_model(ModelConfig(n_feat=8, heads_base_width=8, d_state_fixed=True))) == [16, 16, 16]

    def test_census_pure_function_of_config(self):
        cfg = ModelConfig(n_feat=8, heads_base_width=8)
        assert param_census(cfg) == param_census(dataclasses.replace(cfg, seed=99))

    def test_noss2d_removes_subtree(self):
        cfg = ModelConfig(n_feat=8, heads_base_width=8)
        full, reduced = param_census(cfg), param_census(apply_variant(cfg, "noss2d"))
        assert set(full) - set(reduced) == {n for n in full if ".ss2d." in n}
        assert set(reduced) <= set(full)

    def test_nofb_removes_attention(self):
        cfg = ModelConfig(n_feat=8, heads_base_width=8)
        full, reduced = param_census(cfg), param_census(apply_variant(cfg, "nofb"))
        assert set(full) - set(reduced) == {n for n in full if ".ifa." in n}

    def test_igmsa_same_census(self):
        cfg = ModelConfig(n_feat=8, heads_base_width=8)
        assert param_census(cfg) == param_census(apply_variant(cfg, "igmsa"))


class TestForward:
    def test_pyramid_shapes(self):
        w = build_model(ModelConfig())
        f = Tensor(np.zeros((1, 40, 64, 64), dtype=np.float32))
        shapes = [t.shape for t in build_flu_pyramid(f, w.ifvm)]
        assert shapes == [(1, 40, 64, 64), (1, 80, 32, 32), (1, 160, 16, 16)]

    def test_zero_pyramid(self):
        w = build_model(ModelConfig(n_feat=8, heads_base_width=8))
        for conv in w.ifvm.flu_pyramid:
            conv.b.data[:] = 0.0
        levels = build_flu_pyramid(Tensor(np.zeros((1, 8, 8, 8), dtype=np.float32)), w.ifvm)
        assert not any(l.data.any() for l in levels)

    def test_pyramid_divisibility(self):
        w = build_model(ModelConfig(n_feat=8, heads_base_width=8))
        with pytest.raises(DimensionError, match="multiples of 4"):
            build_flu_pyramid(Tensor(np.zeros((1, 8, 6, 8))), w.ifvm)

    def test_model_shape_and_trace(self):
        w = build_model(ModelConfig())
        trace = []
        out = model_forward(Tensor(np.random.default_rng(0).uniform(size=(1, 3, 64, 64)).astype(np.float32)), w, trace=trace)
        assert out.shape == (1, 3, 64, 64) and out.dtype == np.float32
        assert dict(trace)["bottleneck"] == (1, 160, 16, 16)
        assert [s for s, _ in trace] == ["enc0", "enc1", "bottleneck", "dec1", "dec0"]

    def test_model_requires_multiple_of_four(self, tiny_cfg):
        with pytest.raises(DimensionError):
            model_forward(Tensor(np.zeros((1, 3, 10, 12))), build_model(tiny_cfg))

    def test_ifssm_shape(self):
        cfg = ModelConfig()
        w = IFSSMWeights.build(ParamFactory(np.random.default_rng(0)), cfg, 0)
        x = Tensor(np.random.default_rng(1).standard_normal((1, 40, 16, 16)).astype(np.float32))
        assert ifssm_forward(x, x, w, cfg).shape == (1, 40, 16, 16)

    def test_ifssm_residual_identity(self, rng):
        cfg = ModelConfig(n_feat=8, heads_base_width=8, ss2d_enabled=False)
        w = IFSSMWeights.build(ParamFactory(rng), cfg, 0)
        zero_all([w.ifa, w.ffn_in, w.ffn_out])
        x = Tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
        np.testing.assert_array_equal(ifssm_forward(x, Tensor(rng.standard_normal(x.shape)), w, cfg).data, x.data)

    @pytest.mark.parametrize("fusion", list(FusionMode))
    def test_ifssm_gradcheck(self, rng, fusion):
        cfg = ModelConfig(n_feat=8, heads_base_width=4, d_state_base=4, fusion=fusion)
        w = IFSSMWeights.build(ParamFactory(rng), cfg, 0)
        for p in iter_params(w):
            p.data = p.data.astype(np.float64)
        x, f = Tensor(rng.standard_normal((1, 8, 8, 8))), Tensor(rng.standard_normal((1, 8, 8, 8)))
        proj = rng.standard_normal((1, 8, 8, 8))
        leaves = [x, f, w.ln2.gamma, w.ffn_in.w] + ([w.ifa.wq.w] if w.ifa else [])
        fn = lambda: ifssm_forward(x, f, w, cfg)
        for leaf, g in zip(leaves, grad_of(fn, *leaves, proj=proj)):
            idx = rng.choice(leaf.data.size, size=min(10, leaf.data.size), replace=False)
            num = finite_diff_grad(lambda _: float(np.sum(fn().data * proj)), leaf.data, h=1e-5, indices=idx)
            assert rel_l2(g.reshape(-1)[idx], num) < 1e-3

    def test_dead_restorer_adds_out_bias(self, rng, tiny_cfg):
        w = build_model(tiny_cfg)
        zero_all(w.ifvm)
        w.ifvm.out.b.data[:] = [0.1, -0.2, 0.3]
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        lit, feats, _ = ie_forward(img, illumination_prior(img), w.ie)
        out = model_forward(img, w).data
        np.testing.assert_allclose(out, lit.data + w.ifvm.out.b.data[None, :, None, None], atol=1e-7)
        np.testing.assert_array_equal(ifvm_forward(lit, feats, w.ifvm, tiny_cfg).data, out)

    def test_zeroed_weights_reduce_to_bias_terms(self, rng, tiny_cfg):
        # with every non-bias weight zero: I_en = I * conv_out.b + out.b
        w = build_model(tiny_cfg)
        for p in w.params():
            if not p.name.endswith(".b"):
                p.data[...] = 0.0
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32))
        out = model_forward(img, w).data
        expected = img.data * w.ie.conv_out.b.data[None, :, None, None] + w.ifvm.out.b.data[None, :, None, None]
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_kernels_agree(self, rng, tiny_cfg):
        w = build_model(tiny_cfg)
        img = Tensor(rng.uniform(size=(1, 3, 8, 12)).astype(np.float32))
        np.testing.assert_allclose(model_forward(img, w, kernel="sequential").data, model_forward(img, w).data, atol=1e-5)

    def test_deterministic(self, rng, tiny_cfg):
        img = Tensor(rng.uniform(size=(2, 3, 8, 8)).astype(np.float32))
        a = model_forward(img, build_model(tiny_cfg)).data
        b = model_forward(img, build_model(tiny_cfg)).data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("variant", ["fixedhs", "nofb", "noss2d", "igmsa"])
    def test_variants_run(self, rng, tiny_cfg, variant):
        cfg = apply_variant(tiny_cfg, variant)
        out = model_forward(Tensor(rng.uniform(size=(1, 3, 8, 8)).astype(np.float32)), build_model(cfg))
        assert out.shape == (1, 3, 8, 8) and np.isfinite(out.data).all()

    def test_astype_roundtrip(self, tiny_cfg):
        w = build_model(tiny_cfg).astype(np.float64)
        assert all(p.dtype == np.float64 and p.grad.dtype == np.float64 for p in w.params())
