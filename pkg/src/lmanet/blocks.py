"""Convolutional building blocks and the residual attention block.

All blocks are inference-only compositions of tensor ops: convolutions carry no
bias (batchnorm follows them), nonlinearity is hardswish, and residual branches
are plain additions. Weight specs map relative tensor names to shapes so the
model module can assemble flat checkpoints.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ConfigurationError
from .msa import MsaConfig, MsaWeights, msa_forward, msa_weight_spec, msa_weights_from
from .tensor import BnParams

MID_CHANNEL_FLOOR = 16


@dataclass(frozen=True)
class MBConvConfig:
    """Inverted bottleneck: 1x1 expand, 3x3 depthwise, 1x1 project, BN after each."""

    in_channels: int
    out_channels: int
    stride: int = 1
    expand: int = 4

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError(
                f"MBConvConfig: channels must be >= 1, got {self.in_channels}->{self.out_channels}"
            )
        if self.stride not in (1, 2):
            raise ConfigurationError(f"MBConvConfig: stride must be 1 or 2, got {self.stride}")
        if self.expand < 1:
            raise ConfigurationError(f"MBConvConfig: expand must be >= 1, got {self.expand}")

    @property
    def mid_channels(self) -> int:
        return max(MID_CHANNEL_FLOOR, self.expand * self.in_channels)

    @property
    def residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


@dataclass(frozen=True)
class MBConvWeights:
    expand: np.ndarray
    expand_norm: BnParams
    dw: np.ndarray
    dw_norm: BnParams
    proj: np.ndarray
    proj_norm: BnParams


def mbconv_weight_spec(cfg: MBConvConfig) -> dict:
    mid = cfg.mid_channels
    spec = {"expand.weight": (mid, cfg.in_channels, 1, 1)}
    spec.update({f"expand_norm.{k}": v for k, v in BnParams.spec(mid).items()})
    spec["dw.weight"] = (mid, 1, 3, 3)
    spec.update({f"dw_norm.{k}": v for k, v in BnParams.spec(mid).items()})
    spec["proj.weight"] = (cfg.out_channels, mid, 1, 1)
    spec.update({f"proj_norm.{k}": v for k, v in BnParams.spec(cfg.out_channels).items()})
    return spec


def mbconv_weights_from(params, prefix: str, cfg: MBConvConfig) -> MBConvWeights:
    return MBConvWeights(
        expand=params[prefix + "expand.weight"],
        expand_norm=BnParams.from_params(params, prefix + "expand_norm."),
        dw=params[prefix + "dw.weight"],
        dw_norm=BnParams.from_params(params, prefix + "dw_norm."),
        proj=params[prefix + "proj.weight"],
        proj_norm=BnParams.from_params(params, prefix + "proj_norm."),
    )


def mbconv_forward(x, cfg: MBConvConfig, w: MBConvWeights):
    y = tensor.conv2d(x, w.expand)
    y = tensor.hardswish(tensor.apply_bn(y, w.expand_norm))
    y = tensor.conv2d(y, w.dw, stride=cfg.stride, pad=1, groups=cfg.mid_channels)
    y = tensor.hardswish(tensor.apply_bn(y, w.dw_norm))
    y = tensor.conv2d(y, w.proj)
    y = tensor.apply_bn(y, w.proj_norm)
    return tensor.add(x, y) if cfg.residual else y


@dataclass(frozen=True)
class DsConvConfig:
    """Depthwise-separable: 3x3 depthwise then 1x1 pointwise, BN after each."""

    in_channels: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError(
                f"DsConvConfig: channels must be >= 1, got {self.in_channels}->{self.out_channels}"
            )
        if self.stride not in (1, 2):
            raise ConfigurationError(f"DsConvConfig: stride must be 1 or 2, got {self.stride}")

    @property
    def residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


@dataclass(frozen=True)
class DsConvWeights:
    dw: np.ndarray
    dw_norm: BnParams
    pw: np.ndarray
    pw_norm: BnParams


def dsconv_weight_spec(cfg: DsConvConfig) -> dict:
    spec = {"dw.weight": (cfg.in_channels, 1, 3, 3)}
    spec.update({f"dw_norm.{k}": v for k, v in BnParams.spec(cfg.in_channels).items()})
    spec["pw.weight"] = (cfg.out_channels, cfg.in_channels, 1, 1)
    spec.update({f"pw_norm.{k}": v for k, v in BnParams.spec(cfg.out_channels).items()})
    return spec


def dsconv_weights_from(params, prefix: str, cfg: DsConvConfig) -> DsConvWeights:
    return DsConvWeights(
        dw=params[prefix + "dw.weight"],
        dw_norm=BnParams.from_params(params, prefix + "dw_norm."),
        pw=params[prefix + "pw.weight"],
        pw_norm=BnParams.from_params(params, prefix + "pw_norm."),
    )


def dsconv_forward(x, cfg: DsConvConfig, w: DsConvWeights):
    y = tensor.conv2d(x, w.dw, stride=cfg.stride, pad=1, groups=cfg.in_channels)
    y = tensor.hardswish(tensor.apply_bn(y, w.dw_norm))
    y = tensor.conv2d(y, w.pw)
    y = tensor.apply_bn(y, w.pw_norm)
    return tensor.add(x, y) if cfg.residual else y


@dataclass(frozen=True)
class MsaBlockConfig:
    """Residual multi-scale attention followed by a residual MBConv, both stride 1."""

    msa: MsaConfig
    mbconv: MBConvConfig

    def __post_init__(self):
        if not self.mbconv.residual:
            raise ConfigurationError("MsaBlockConfig: mbconv half must be residual (stride 1, C -> C)")
        if self.mbconv.in_channels != self.msa.in_channels:
            raise ConfigurationError(
                f"MsaBlockConfig: channel mismatch, msa {self.msa.in_channels} vs mbconv {self.mbconv.in_channels}"
            )


@dataclass(frozen=True)
class MsaBlockWeights:
    msa: MsaWeights
    mbconv: MBConvWeights


def msa_block_weight_spec(cfg: MsaBlockConfig) -> dict:
    spec = {f"msa.{k}": v for k, v in msa_weight_spec(cfg.msa).items()}
    spec.update({f"mbconv.{k}": v for k, v in mbconv_weight_spec(cfg.mbconv).items()})
    return spec


def msa_block_weights_from(params, prefix: str, cfg: MsaBlockConfig) -> MsaBlockWeights:
    return MsaBlockWeights(
        msa=msa_weights_from(params, prefix + "msa.", cfg.msa),
        mbconv=mbconv_weights_from(params, prefix + "mbconv.", cfg.mbconv),
    )


def msa_block_forward(x, cfg: MsaBlockConfig, w: MsaBlockWeights):
    # the attention half needs an explicit skip; the mbconv half is residual by config
    x = tensor.add(x, msa_forward(x, cfg.msa, w.msa))
    return mbconv_forward(x, cfg.mbconv, w.mbconv)
