import numpy as np
import pytest

from lmanet import tensor
from lmanet.attention import multi_head_attention, AttentionConfig
from lmanet.errors import ConfigurationError, DimensionError
from lmanet.msa import (
    MsaConfig,
    MsaWeights,
    aggregate_scale,
    msa_forward,
    msa_weight_spec,
    msa_weights_from,
    qkv_project,
)
from lmanet.tensor import BnParams
from util import assert_close, rng


def random_weights(cfg, seed):
    g = rng(seed)
    agg = {}
    for k in cfg.scales:
        if k > 1:
            agg[k] = (
                g.standard_normal((cfg.qkv_channels, 1, k, k)).astype(np.float32) * 0.5,
                g.standard_normal((cfg.qkv_channels, cfg.d, 1, 1)).astype(np.float32) * 0.5,
            )
    return MsaWeights(
        qkv=g.standard_normal((cfg.qkv_channels, cfg.in_channels, 1, 1)).astype(np.float32) * 0.5,
        proj=g.standard_normal((cfg.in_channels, cfg.concat_width, 1, 1)).astype(np.float32) * 0.5,
        norm=BnParams(
            gamma=np.ones(cfg.in_channels, np.float32),
            beta=np.zeros(cfg.in_channels, np.float32),
            mean=np.zeros(cfg.in_channels, np.float32),
            var=np.ones(cfg.in_channels, np.float32),
        ),
        agg=agg,
    )


class TestConfig:
    def test_heads_rule(self):
        assert MsaConfig(16, d=32).heads == 1
        assert MsaConfig(32, d=32).heads == 1
        assert MsaConfig(64, d=32).heads == 2
        assert MsaConfig(128, d=32).heads == 4

    def test_derived_widths(self):
        cfg = MsaConfig(64, d=32, scales=(1, 5))
        assert cfg.qkv_channels == 192
        assert cfg.agg_groups == 6
        assert cfg.concat_width == 128

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            MsaConfig(0)
        with pytest.raises(ConfigurationError):
            MsaConfig(8, scales=())
        with pytest.raises(ConfigurationError):
            MsaConfig(8, scales=(1, 4))
        with pytest.raises(ConfigurationError):
            MsaConfig(8, scales=(1, 5, 5))
        with pytest.raises(ConfigurationError):
            MsaConfig(8, kind="bilinear")


class TestQkvProject:
    def test_identity_blocks_reproduce_input(self):
        # with identity q/k/v blocks each part equals the input channels per head
        d, heads = 4, 2
        c = heads * d
        cfg = MsaConfig(c, d=d)
        w = np.zeros((cfg.qkv_channels, c, 1, 1), np.float32)
        for h in range(heads):
            for part in range(3):
                for i in range(d):
                    w[h * 3 * d + part * d + i, h * d + i, 0, 0] = 1.0
        x = rng(0).standard_normal((1, c, 3, 3)).astype(np.float32)
        out = qkv_project(x, w)
        for h in range(heads):
            for part in range(3):
                got = out[:, h * 3 * d + part * d : h * 3 * d + (part + 1) * d]
                assert np.array_equal(got, x[:, h * d : (h + 1) * d])

    def test_zero_weight(self):
        cfg = MsaConfig(8, d=4)
        x = rng(1).standard_normal((1, 8, 2, 2)).astype(np.float32)
        out = qkv_project(x, np.zeros((cfg.qkv_channels, 8, 1, 1), np.float32))
        assert not out.any()

    def test_matches_token_matmul(self):
        cfg = MsaConfig(6, d=3)
        x = rng(2).standard_normal((1, 6, 4, 5)).astype(np.float32)
        w = rng(3).standard_normal((cfg.qkv_channels, 6, 1, 1)).astype(np.float32)
        out = qkv_project(x, w)
        tokens = x[0].reshape(6, 20).T
        want = tensor.matmul(tokens, np.ascontiguousarray(w[:, :, 0, 0].T))
        assert_close(out[0].reshape(cfg.qkv_channels, 20).T, want, abs_tol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            qkv_project(np.zeros((1, 4, 2, 2), np.float32), np.zeros((6, 5, 1, 1), np.float32))


class TestAggregateScale:
    def test_scale1_is_identity(self):
        cfg = MsaConfig(8, d=4)
        w = random_weights(cfg, 4)
        qkv = rng(5).standard_normal((1, cfg.qkv_channels, 3, 3)).astype(np.float32)
        out = aggregate_scale(qkv, 1, cfg, w)
        assert out is qkv  # bit-identical, no copy

    def test_delta_and_identity_kernels(self):
        # center-tap depthwise + per-group identity 1x1 leaves the map unchanged
        cfg = MsaConfig(8, d=4, scales=(1, 3))
        c, d = cfg.qkv_channels, cfg.d
        dw = np.zeros((c, 1, 3, 3), np.float32)
        dw[:, 0, 1, 1] = 1.0
        pw = np.zeros((c, d, 1, 1), np.float32)
        for co in range(c):
            pw[co, co % d, 0, 0] = 1.0
        w = MsaWeights(qkv=None, proj=None, norm=None, agg={3: (dw, pw)})
        qkv = rng(6).standard_normal((1, c, 4, 4)).astype(np.float32)
        assert_close(aggregate_scale(qkv, 3, cfg, w), qkv, abs_tol=1e-6)

    @pytest.mark.parametrize("seed", range(6))
    def test_fused_equals_unfused_groups(self, seed):
        g = rng(7, seed)
        d = int(g.integers(2, 6))
        heads = int(g.integers(1, 4))
        k = int(g.choice([3, 5, 7]))
        cfg = MsaConfig(heads * d, d=d, scales=(1, k))
        c = cfg.qkv_channels
        qkv = g.standard_normal((1, c, 6, 5)).astype(np.float32)
        dw = g.standard_normal((c, 1, k, k)).astype(np.float32)
        pw = g.standard_normal((c, d, 1, 1)).astype(np.float32)
        w = MsaWeights(qkv=None, proj=None, norm=None, agg={k: (dw, pw)})
        fused = aggregate_scale(qkv, k, cfg, w)
        parts = []
        for gi in range(cfg.agg_groups):
            sl = slice(gi * d, (gi + 1) * d)
            y = tensor.conv2d(qkv[:, sl], dw[sl], stride=1, pad=(k - 1) // 2, groups=d)
            parts.append(tensor.conv2d(y, pw[sl]))
        assert_close(fused, tensor.concat_channels(parts), abs_tol=1e-6)

    def test_even_scale_rejected(self):
        cfg = MsaConfig(8, d=4)
        with pytest.raises(ConfigurationError):
            aggregate_scale(np.zeros((1, cfg.qkv_channels, 2, 2), np.float32), 4, cfg, random_weights(cfg, 8))

    def test_missing_scale_weights(self):
        cfg = MsaConfig(8, d=4, scales=(1,))
        w = random_weights(cfg, 9)
        with pytest.raises(ConfigurationError):
            aggregate_scale(np.zeros((1, cfg.qkv_channels, 2, 2), np.float32), 5, cfg, w)


class TestMsaForward:
    def test_fast_equals_naive_kind(self):
        for c, d in ((8, 4), (12, 4)):
            x = rng(10, c, d).standard_normal((1, c, 5, 4)).astype(np.float32)
            fast_cfg = MsaConfig(c, d=d, scales=(1, 3), kind="relu_fast")
            naive_cfg = MsaConfig(c, d=d, scales=(1, 3), kind="relu_naive")
            w = random_weights(fast_cfg, 11)
            assert_close(msa_forward(x, fast_cfg, w), msa_forward(x, naive_cfg, w), abs_tol=1e-5, rel_tol=1e-4)

    def test_single_pixel_reduces_to_conv_chain(self):
        # one token: attention returns sim*V/(sim+eps) ~ V provided the head is live,
        # so with positive weights the module reduces to a chain of 1x1 convs
        cfg = MsaConfig(8, d=4, scales=(1, 5))
        w = random_weights(cfg, 12)
        w = MsaWeights(
            qkv=np.abs(w.qkv) + np.float32(0.05),
            proj=w.proj,
            norm=w.norm,
            agg={k: (np.abs(dw) + np.float32(0.05), np.abs(pw) + np.float32(0.05)) for k, (dw, pw) in w.agg.items()},
        )
        x = np.abs(rng(13).standard_normal((1, 8, 1, 1))).astype(np.float32) + np.float32(0.1)
        got = msa_forward(x, cfg, w)

        qkv = tensor.conv2d(x, w.qkv)
        branches = []
        for k in cfg.scales:
            agg = qkv if k == 1 else aggregate_scale(qkv, k, cfg, w)
            vs = [
                agg[:, h * 3 * cfg.d + 2 * cfg.d : (h + 1) * 3 * cfg.d]
                for h in range(cfg.heads)
            ]
            branches.append(tensor.concat_channels(vs))
        want = tensor.apply_bn(tensor.conv2d(tensor.concat_channels(branches), w.proj), w.norm)
        assert_close(got, want, abs_tol=1e-4, rel_tol=1e-4)

    def test_spatial_permutation_equivariance(self):
        # scale-1-only attention treats tokens as a set
        cfg = MsaConfig(8, d=4, scales=(1,))
        w = random_weights(cfg, 14)
        x = rng(15).standard_normal((1, 8, 4, 6)).astype(np.float32)
        base = msa_forward(x, cfg, w)
        perm = rng(16).permutation(24)
        xp = x.reshape(1, 8, 24)[:, :, perm].reshape(1, 8, 4, 6)
        got = msa_forward(xp, cfg, w)
        want = base.reshape(1, 8, 24)[:, :, perm].reshape(1, 8, 4, 6)
        assert_close(got, want, abs_tol=1e-6, rel_tol=1e-5)

    @pytest.mark.parametrize("c", [64, 128, 192, 256, 384, 512])
    def test_shape_preserved_at_stage_widths(self, c):
        cfg = MsaConfig(c, d=32)
        w = random_weights(cfg, 17 + c)
        x = rng(18, c).standard_normal((1, c, 4, 4)).astype(np.float32)
        out = msa_forward(x, cfg, w)
        assert out.shape == x.shape
        assert np.isfinite(out).all()

    def test_global_attention_off_keeps_v(self):
        # ablation: identity over tokens passes each token's v block through
        cfg_on = MsaConfig(8, d=4, scales=(1,), global_attention=True)
        cfg_off = MsaConfig(8, d=4, scales=(1,), global_attention=False)
        w = random_weights(cfg_on, 19)
        x = rng(20).standard_normal((1, 8, 3, 3)).astype(np.float32)
        got = msa_forward(x, cfg_off, w)
        qkv = tensor.conv2d(x, w.qkv)
        vs = [qkv[:, h * 12 + 8 : h * 12 + 12] for h in range(cfg_off.heads)]
        want = tensor.apply_bn(tensor.conv2d(tensor.concat_channels(vs), w.proj), w.norm)
        assert_close(got, want, abs_tol=1e-6)
        assert not np.allclose(got, msa_forward(x, cfg_on, w), atol=1e-3)

    def test_multi_head_branch_matches_tokens(self):
        # the NCHW -> token plumbing must agree with calling attention directly
        cfg = MsaConfig(8, d=4, scales=(1,))
        w = random_weights(cfg, 21)
        x = rng(22).standard_normal((1, 8, 2, 3)).astype(np.float32)
        got = msa_forward(x, cfg, w)
        qkv = tensor.conv2d(x, w.qkv)
        tokens = qkv[0].reshape(cfg.qkv_channels, 6).T
        att = multi_head_attention(tokens, AttentionConfig(d=4, heads=2, kind="relu_fast", eps=cfg.eps))
        maps = att.T.reshape(1, 8, 2, 3)
        want = tensor.apply_bn(tensor.conv2d(maps, w.proj), w.norm)
        assert_close(got, want, abs_tol=1e-6)

    def test_determinism(self):
        cfg = MsaConfig(16, d=8)
        w = random_weights(cfg, 23)
        x = rng(24).standard_normal((1, 16, 4, 4)).astype(np.float32)
        assert np.array_equal(msa_forward(x, cfg, w), msa_forward(x, cfg, w))

    def test_channel_mismatch(self):
        cfg = MsaConfig(8, d=4)
        with pytest.raises(ConfigurationError):
            msa_forward(np.zeros((1, 9, 2, 2), np.float32), cfg, random_weights(cfg, 25))


class TestWeightSpec:
    def test_names_and_shapes(self):
        cfg = MsaConfig(64, d=32, scales=(1, 5))
        spec = msa_weight_spec(cfg)
        assert spec["qkv.weight"] == (192, 64, 1, 1)
        assert spec["agg5.dw.weight"] == (192, 1, 5, 5)
        assert spec["agg5.pw.weight"] == (192, 32, 1, 1)
        assert spec["proj.weight"] == (64, 128, 1, 1)
        assert spec["norm.gamma"] == (64,)
        assert "agg1.dw.weight" not in spec

    def test_from_params_round_trip(self):
        cfg = MsaConfig(8, d=4, scales=(1, 3))
        params = {}
        for i, (name, shape) in enumerate(msa_weight_spec(cfg).items()):
            if name.endswith("var"):
                params[name] = rng(26, i).uniform(0.5, 1.5, shape).astype(np.float32)
            else:
                params[name] = rng(26, i).standard_normal(shape).astype(np.float32)
        w = msa_weights_from(params, "", cfg)
        x = rng(27).standard_normal((1, 8, 3, 3)).astype(np.float32)
        out = msa_forward(x, cfg, w)
        assert out.shape == x.shape
        assert np.isfinite(out).all()
