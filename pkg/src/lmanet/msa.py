"""Multi-scale attention over feature maps.

The module projects an (N, C, H, W) map to packed qkv channels with one 1x1
convolution, builds one token branch per scale, attends within each branch,
concatenates the per-branch outputs along channels, and projects back to C
channels with a 1x1 convolution followed by batchnorm.

A scale k > 1 aggregates each token's k x k neighborhood before attention:
a depthwise k x k convolution followed by a grouped 1x1 convolution whose
group count is 3 * heads, i.e. each q/k/v block of every head is mixed only
within its own d channels. Scale 1 is the unaggregated qkv itself. The two
aggregation convolutions carry no bias, normalization, or activation.

Channel layout everywhere: head h occupies channels [h*3d, (h+1)*3d) of the
qkv map, ordered [q | k | v] within the head.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .attention import ATTENTION_KINDS, DEFAULT_EPS, AttentionConfig, multi_head_attention
from .errors import ConfigurationError, DimensionError
from .tensor import BnParams

DEFAULT_SCALES = (1, 5)


@dataclass(frozen=True)
class MsaConfig:
    in_channels: int
    d: int = 32
    scales: tuple = DEFAULT_SCALES
    kind: str = "relu_fast"
    eps: float = DEFAULT_EPS
    global_attention: bool = True

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigurationError(f"MsaConfig: in_channels must be >= 1, got {self.in_channels}")
        if self.d < 1:
            raise ConfigurationError(f"MsaConfig: d must be >= 1, got {self.d}")
        scales = tuple(self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales:
            raise ConfigurationError("MsaConfig: scales must be non-empty")
        for k in scales:
            if not (isinstance(k, int) and k >= 1 and k % 2 == 1):
                raise ConfigurationError(f"MsaConfig: scales must be odd positive integers, got {k!r}")
        if len(set(scales)) != len(scales):
            raise ConfigurationError(f"MsaConfig: duplicate scales in {scales}")
        if self.kind not in ATTENTION_KINDS:
            raise ConfigurationError(
                f"MsaConfig: unknown attention kind {self.kind!r}, expected one of {ATTENTION_KINDS}"
            )
        if not (self.eps >= 0.0):
            raise ConfigurationError(f"MsaConfig: eps must be >= 0, got {self.eps}")

    @property
    def heads(self) -> int:
        return max(1, self.in_channels // self.d)

    @property
    def qkv_channels(self) -> int:
        return 3 * self.heads * self.d

    @property
    def agg_groups(self) -> int:
        return 3 * self.heads

    @property
    def concat_width(self) -> int:
        return len(self.scales) * self.heads * self.d


@dataclass(frozen=True)
class MsaWeights:
    """qkv: (3hd, C, 1, 1); agg[k] = (depthwise (3hd, 1, k, k), grouped 1x1 (3hd, d, 1, 1));
    proj: (C, len(scales)*hd, 1, 1); norm over the C output channels."""

    qkv: np.ndarray
    proj: np.ndarray
    norm: BnParams
    agg: dict = field(default_factory=dict)


def msa_weight_spec(cfg: MsaConfig) -> dict:
    """Relative tensor name -> shape for one msa module."""
    hd3 = cfg.qkv_channels
    spec = {"qkv.weight": (hd3, cfg.in_channels, 1, 1)}
    for k in cfg.scales:
        if k > 1:
            spec[f"agg{k}.dw.weight"] = (hd3, 1, k, k)
            spec[f"agg{k}.pw.weight"] = (hd3, cfg.d, 1, 1)
    spec["proj.weight"] = (cfg.in_channels, cfg.concat_width, 1, 1)
    for name, shape in BnParams.spec(cfg.in_channels).items():
        spec[f"norm.{name}"] = shape
    return spec


def msa_weights_from(params, prefix: str, cfg: MsaConfig) -> MsaWeights:
    agg = {}
    for k in cfg.scales:
        if k > 1:
            agg[k] = (params[f"{prefix}agg{k}.dw.weight"], params[f"{prefix}agg{k}.pw.weight"])
    return MsaWeights(
        qkv=params[prefix + "qkv.weight"],
        proj=params[prefix + "proj.weight"],
        norm=BnParams.from_params(params, prefix + "norm."),
        agg=agg,
    )


def qkv_project(x, weight):
    """1x1 convolution from C input channels to the packed qkv channels."""
    x = np.asarray(x, dtype=np.float32)
    weight = np.asarray(weight, dtype=np.float32)
    if x.ndim != 4:
        raise DimensionError(f"qkv_project: x must be rank 4, got {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise DimensionError(f"qkv_project: weight must be (out, in, 1, 1), got {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"qkv_project: weight expects {weight.shape[1]} input channels, map has {x.shape[1]}"
        )
    return tensor.conv2d(x, weight)


def aggregate_scale(qkv, scale: int, cfg: MsaConfig, weights: MsaWeights):
    """Neighborhood aggregation for one scale. Scale 1 returns the input unchanged."""
    if not (isinstance(scale, int) and scale >= 1 and scale % 2 == 1):
        raise ConfigurationError(f"aggregate_scale: scale must be an odd positive integer, got {scale!r}")
    qkv = np.asarray(qkv, dtype=np.float32)
    if qkv.ndim != 4 or qkv.shape[1] != cfg.qkv_channels:
        raise DimensionError(
            f"aggregate_scale: expected (N, {cfg.qkv_channels}, H, W), got {qkv.shape}"
        )
    if scale == 1:
        return qkv
    try:
        dw, pw = weights.agg[scale]
    except KeyError:
        raise ConfigurationError(f"aggregate_scale: no aggregation weights for scale {scale}") from None
    y = tensor.conv2d(qkv, dw, stride=1, pad=(scale - 1) // 2, groups=cfg.qkv_channels)
    return tensor.conv2d(y, pw, groups=cfg.agg_groups)


def _branch_attention(maps, cfg: MsaConfig):
    """Flatten (N, 3hd, H, W) to tokens, attend per head, restore (N, hd, H, W)."""
    n, _, h, w = maps.shape
    att_cfg = AttentionConfig(d=cfg.d, heads=cfg.heads, kind=cfg.kind, eps=cfg.eps)
    hd = cfg.heads * cfg.d
    out = np.empty((n, hd, h, w), dtype=np.float32)
    for b in range(n):
        tokens = maps[b].reshape(cfg.qkv_channels, h * w).T
        if cfg.global_attention:
            res = multi_head_attention(tokens, att_cfg)
        else:
            # attention ablated to the identity over tokens: each token keeps its v block
            parts = [
                tokens[:, hh * 3 * cfg.d + 2 * cfg.d : (hh + 1) * 3 * cfg.d]
                for hh in range(cfg.heads)
            ]
            res = np.concatenate(parts, axis=1)
        out[b] = res.T.reshape(hd, h, w)
    return out


def msa_forward(x, cfg: MsaConfig, weights: MsaWeights):
    """Full multi-scale attention: qkv, per-scale branches, concat, projection, norm."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise DimensionError(f"msa_forward: x must be rank 4, got {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ConfigurationError(
            f"msa_forward: map has {x.shape[1]} channels, config expects {cfg.in_channels}"
        )
    qkv = qkv_project(x, weights.qkv)
    branches = []
    for k in cfg.scales:
        agg = aggregate_scale(qkv, k, cfg, weights)
        branches.append(_branch_attention(agg, cfg))
    y = tensor.concat_channels(branches)
    y = tensor.conv2d(y, weights.proj)
    return tensor.apply_bn(y, weights.norm)
