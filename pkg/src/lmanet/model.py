"""Macro architecture: variants B0-B3, backbone, heads, and analytic cost accounting.

A built Model is a pure description (dataclasses holding layer specs plus a flat
name -> shape weight spec). Forward passes take the model description and a flat
mapping of weight tensors, so checkpoints, initialization, and counting all share
one naming scheme:

    stem.conv.weight, stem.conv.norm.gamma, ...
    stage1.block1.expand.weight, ...
    stage3.down.dw.weight, stage3.block2.msa.qkv.weight, ...
    head.in2.weight, head.block1.proj.weight, head.classifier.bias, ...

The backbone runs at strides 2/4/8/16/32; attention blocks live in stages 3 and 4.
The segmentation head fuses P2/P3/P4 additively at stride 8 and predicts at input
resolution; the classification head pools P4.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor
from .blocks import (
    DsConvConfig,
    MBConvConfig,
    MsaBlockConfig,
    dsconv_forward,
    dsconv_weight_spec,
    dsconv_weights_from,
    mbconv_forward,
    mbconv_weight_spec,
    mbconv_weights_from,
    msa_block_forward,
    msa_block_weight_spec,
    msa_block_weights_from,
)
from .errors import ConfigurationError, InputError
from .msa import DEFAULT_SCALES, MsaConfig
from .tensor import BnParams, conv_out_extent

INPUT_DIVISOR = 32
ATTENTION_DIM = 32
SEG_DEFAULT_CLASSES = 19
CLS_DEFAULT_CLASSES = 1000

TASKS = ("segmentation", "classification")
_TASK_ALIASES = {"seg": "segmentation", "cls": "classification"}


@dataclass(frozen=True)
class VariantConfig:
    """Stage widths/depths plus segmentation-head width/depth for one variant."""

    name: str
    widths: tuple            # (stem, stage1, stage2, stage3, stage4)
    depths: tuple            # (stem, stage1, stage2, stage3, stage4)
    head_width: int
    head_depth: int

    def __post_init__(self):
        if len(self.widths) != 5 or len(self.depths) != 5:
            raise ConfigurationError("VariantConfig: widths and depths must have 5 entries")
        if any(c < 1 for c in self.widths) or any(l < 1 for l in self.depths):
            raise ConfigurationError("VariantConfig: widths and depths must be >= 1")
        if self.head_width < 1 or self.head_depth < 0:
            raise ConfigurationError("VariantConfig: bad head config")


VARIANTS = {
    "B0": VariantConfig("B0", (8, 16, 32, 64, 128), (1, 2, 2, 2, 2), 32, 1),
    "B1": VariantConfig("B1", (16, 32, 64, 128, 256), (1, 2, 3, 3, 4), 64, 3),
    "B2": VariantConfig("B2", (24, 48, 96, 192, 384), (1, 3, 4, 4, 6), 96, 3),
    "B3": VariantConfig("B3", (32, 64, 128, 256, 512), (1, 4, 6, 6, 9), 128, 3),
}


def scaled_variant(base: VariantConfig, width_mult: float) -> VariantConfig:
    """Rescale all stage and head widths by width_mult (rounded, floor 1)."""
    if width_mult <= 0:
        raise ConfigurationError(f"scaled_variant: width_mult must be > 0, got {width_mult}")
    widths = tuple(max(1, round(width_mult * c)) for c in base.widths)
    head_w = max(1, round(width_mult * base.head_width))
    return replace(base, widths=widths, head_width=head_w)


@dataclass(frozen=True)
class Conv2dSpec:
    """A convolution with optional bias, batchnorm, and hardswish."""

    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    groups: int = 1
    bias: bool = False
    norm: bool = False
    act: bool = False


@dataclass(frozen=True)
class FcSpec:
    """Fully connected layer with bias and optional hardswish."""

    in_features: int
    out_features: int
    act: bool = False


@dataclass(frozen=True)
class Backbone:
    stem: tuple       # ((name, Conv2dSpec | DsConvConfig), ...)
    stages: tuple     # 4 tuples of (name, MBConvConfig | MsaBlockConfig)


@dataclass(frozen=True)
class SegHead:
    in_proj: tuple    # (("in2", Conv2dSpec), ("in3", ...), ("in4", ...))
    blocks: tuple     # ((name, MBConvConfig), ...)
    classifier: Conv2dSpec


@dataclass(frozen=True)
class ClsHead:
    expand: Conv2dSpec
    fc1: FcSpec
    fc2: FcSpec


@dataclass(frozen=True)
class Pyramid:
    """Backbone outputs at strides 8, 16, and 32."""

    p2: np.ndarray
    p3: np.ndarray
    p4: np.ndarray


@dataclass(frozen=True)
class Model:
    variant: VariantConfig
    task: str
    n_classes: int
    scales: tuple
    attention_kind: str
    global_attention: bool
    backbone: Backbone = field(repr=False)
    head: object = field(repr=False)


def _resolve_variant(variant) -> VariantConfig:
    if isinstance(variant, VariantConfig):
        return variant
    if isinstance(variant, str):
        try:
            return VARIANTS[variant]
        except KeyError:
            raise ConfigurationError(
                f"unknown variant {variant!r}, expected one of {sorted(VARIANTS)}"
            ) from None
    raise ConfigurationError(f"variant must be a name or VariantConfig, got {type(variant).__name__}")


def build_model(
    variant,
    task: str = "segmentation",
    n_classes: int | None = None,
    *,
    scales: tuple = DEFAULT_SCALES,
    attention_kind: str = "relu_fast",
    global_attention: bool = True,
) -> Model:
    """Assemble the model description for one variant and task."""
    v = _resolve_variant(variant)
    task = _TASK_ALIASES.get(task, task)
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}, expected one of {TASKS}")
    if n_classes is None:
        n_classes = SEG_DEFAULT_CLASSES if task == "segmentation" else CLS_DEFAULT_CLASSES
    if n_classes < 1:
        raise ConfigurationError(f"n_classes must be >= 1, got {n_classes}")

    stem_entries = [("conv", Conv2dSpec(3, v.widths[0], kernel=3, stride=2, pad=1, norm=True, act=True))]
    for i in range(v.depths[0] - 1):
        stem_entries.append((f"ds{i + 1}", DsConvConfig(v.widths[0], v.widths[0])))

    stages = []
    prev = v.widths[0]
    for s in (1, 2):
        width, depth = v.widths[s], v.depths[s]
        entries = [("block1", MBConvConfig(prev, width, stride=2))]
        for i in range(2, depth + 1):
            entries.append((f"block{i}", MBConvConfig(width, width)))
        stages.append(tuple(entries))
        prev = width
    for s in (3, 4):
        width, depth = v.widths[s], v.depths[s]
        entries = [("down", MBConvConfig(prev, width, stride=2))]
        msa_cfg = MsaConfig(
            width,
            d=ATTENTION_DIM,
            scales=scales,
            kind=attention_kind,
            global_attention=global_attention,
        )
        for i in range(1, depth + 1):
            entries.append((f"block{i}", MsaBlockConfig(msa_cfg, MBConvConfig(width, width))))
        stages.append(tuple(entries))
        prev = width

    backbone = Backbone(stem=tuple(stem_entries), stages=tuple(stages))

    if task == "segmentation":
        hw = v.head_width
        in_proj = (
            ("in2", Conv2dSpec(v.widths[2], hw)),
            ("in3", Conv2dSpec(v.widths[3], hw)),
            ("in4", Conv2dSpec(v.widths[4], hw)),
        )
        head_blocks = tuple((f"block{i}", MBConvConfig(hw, hw)) for i in range(1, v.head_depth + 1))
        head = SegHead(in_proj=in_proj, blocks=head_blocks, classifier=Conv2dSpec(hw, n_classes, bias=True))
    else:
        c4 = v.widths[4]
        head = ClsHead(
            expand=Conv2dSpec(c4, 4 * c4, norm=True, act=True),
            fc1=FcSpec(4 * c4, 8 * c4, act=True),
            fc2=FcSpec(8 * c4, n_classes),
        )

    return Model(
        variant=v,
        task=task,
        n_classes=n_classes,
        scales=tuple(scales),
        attention_kind=attention_kind,
        global_attention=global_attention,
        backbone=backbone,
        head=head,
    )


def _conv_spec_weight_spec(spec: Conv2dSpec) -> dict:
    out = {"weight": (spec.out_channels, spec.in_channels // spec.groups, spec.kernel, spec.kernel)}
    if spec.bias:
        out["bias"] = (spec.out_channels,)
    if spec.norm:
        out.update({f"norm.{k}": v for k, v in BnParams.spec(spec.out_channels).items()})
    return out


def _fc_weight_spec(spec: FcSpec) -> dict:
    return {"weight": (spec.out_features, spec.in_features), "bias": (spec.out_features,)}


def _entry_weight_spec(cfg) -> dict:
    if isinstance(cfg, Conv2dSpec):
        return _conv_spec_weight_spec(cfg)
    if isinstance(cfg, FcSpec):
        return _fc_weight_spec(cfg)
    if isinstance(cfg, MBConvConfig):
        return mbconv_weight_spec(cfg)
    if isinstance(cfg, DsConvConfig):
        return dsconv_weight_spec(cfg)
    if isinstance(cfg, MsaBlockConfig):
        return msa_block_weight_spec(cfg)
    raise ConfigurationError(f"unknown layer config type {type(cfg).__name__}")


def _head_entries(model: Model):
    if model.task == "segmentation":
        head: SegHead = model.head
        entries = list(head.in_proj) + list(head.blocks) + [("classifier", head.classifier)]
    else:
        head: ClsHead = model.head
        entries = [("expand", head.expand), ("fc1", head.fc1), ("fc2", head.fc2)]
    return entries


def _all_entries(model: Model):
    """Yield (full_prefix, cfg) pairs in checkpoint order."""
    for name, cfg in model.backbone.stem:
        yield f"stem.{name}", cfg
    for si, stage in enumerate(model.backbone.stages, start=1):
        for name, cfg in stage:
            yield f"stage{si}.{name}", cfg
    for name, cfg in _head_entries(model):
        yield f"head.{name}", cfg


def weight_spec(model: Model) -> dict:
    """Flat tensor name -> shape for the whole model, in checkpoint order."""
    spec = {}
    for prefix, cfg in _all_entries(model):
        for rel, shape in _entry_weight_spec(cfg).items():
            spec[f"{prefix}.{rel}"] = shape
    return spec


def _conv_spec_forward(x, spec: Conv2dSpec, params, prefix: str):
    bias = params[prefix + "bias"] if spec.bias else None
    y = tensor.conv2d(
        x, params[prefix + "weight"], bias, stride=spec.stride, pad=spec.pad, groups=spec.groups
    )
    if spec.norm:
        y = tensor.apply_bn(y, BnParams.from_params(params, prefix + "norm."))
    if spec.act:
        y = tensor.hardswish(y)
    return y


def _fc_forward(x, spec: FcSpec, params, prefix: str):
    w = params[prefix + "weight"]
    y = tensor.matmul(x, np.ascontiguousarray(w.T))
    y = y + np.asarray(params[prefix + "bias"], dtype=np.float32)[None, :]
    if spec.act:
        y = tensor.hardswish(y)
    return y


def _entry_forward(x, cfg, params, prefix: str):
    if isinstance(cfg, Conv2dSpec):
        return _conv_spec_forward(x, cfg, params, prefix)
    if isinstance(cfg, MBConvConfig):
        return mbconv_forward(x, cfg, mbconv_weights_from(params, prefix, cfg))
    if isinstance(cfg, DsConvConfig):
        return dsconv_forward(x, cfg, dsconv_weights_from(params, prefix, cfg))
    if isinstance(cfg, MsaBlockConfig):
        return msa_block_forward(x, cfg, msa_block_weights_from(params, prefix, cfg))
    raise ConfigurationError(f"unknown layer config type {type(cfg).__name__}")


def backbone_forward(model: Model, x, params) -> Pyramid:
    """Run stem and stages, returning the P2/P3/P4 pyramid."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 3:
        raise InputError(f"backbone input must be (N, 3, H, W), got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if h % INPUT_DIVISOR != 0 or w % INPUT_DIVISOR != 0:
        raise InputError(
            f"input resolution {h}x{w} must be divisible by {INPUT_DIVISOR} in both extents"
        )
    for name, cfg in model.backbone.stem:
        x = _entry_forward(x, cfg, params, f"stem.{name}.")
    taps = {}
    for si, stage in enumerate(model.backbone.stages, start=1):
        for name, cfg in stage:
            x = _entry_forward(x, cfg, params, f"stage{si}.{name}.")
        taps[si] = x
    return Pyramid(p2=taps[2], p3=taps[3], p4=taps[4])


def seg_head_forward(model: Model, pyramid: Pyramid, params):
    """Fuse the pyramid at stride 8 and predict per-pixel class logits at input resolution."""
    if model.task != "segmentation":
        raise ConfigurationError("seg_head_forward: model was built for classification")
    head: SegHead = model.head
    (n2, s2), (n3, s3), (n4, s4) = head.in_proj
    th, tw = pyramid.p2.shape[2], pyramid.p2.shape[3]
    y2 = _conv_spec_forward(pyramid.p2, s2, params, f"head.{n2}.")
    y3 = _conv_spec_forward(pyramid.p3, s3, params, f"head.{n3}.")
    y4 = _conv_spec_forward(pyramid.p4, s4, params, f"head.{n4}.")
    fused = tensor.add(y2, tensor.bilinear_upsample(y3, th, tw))
    fused = tensor.add(fused, tensor.bilinear_upsample(y4, th, tw))
    for name, cfg in head.blocks:
        fused = _entry_forward(fused, cfg, params, f"head.{name}.")
    logits = _conv_spec_forward(fused, head.classifier, params, "head.classifier.")
    return tensor.bilinear_upsample(logits, 8 * th, 8 * tw)


def cls_head_forward(model: Model, p4, params):
    """Pool P4 and produce (N, n_classes) logits."""
    if model.task != "classification":
        raise ConfigurationError("cls_head_forward: model was built for segmentation")
    head: ClsHead = model.head
    y = tensor.global_avg_pool(p4)
    y = _conv_spec_forward(y, head.expand, params, "head.expand.")
    y = y.reshape(y.shape[0], y.shape[1])
    y = _fc_forward(y, head.fc1, params, "head.fc1.")
    return _fc_forward(y, head.fc2, params, "head.fc2.")


def model_forward(model: Model, x, params):
    """backbone + task head. Segmentation returns (N, n_classes, H, W); classification (N, n_classes)."""
    pyramid = backbone_forward(model, x, params)
    if model.task == "segmentation":
        return seg_head_forward(model, pyramid, params)
    return cls_head_forward(model, pyramid.p4, params)


def count_params(model: Model) -> int:
    """Learned parameter count: all weights and biases plus norm gamma/beta.

    Batchnorm running mean and var are buffers, not parameters, and are excluded
    (they still live in checkpoints).
    """
    total = 0
    for name, shape in weight_spec(model).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("mean", "var"):
            continue
        total += math.prod(shape)
    return total


def _conv_spec_macs(spec: Conv2dSpec, h: int, w: int):
    ho = conv_out_extent(h, spec.kernel, spec.stride, spec.pad)
    wo = conv_out_extent(w, spec.kernel, spec.stride, spec.pad)
    macs = ho * wo * spec.out_channels * (spec.in_channels // spec.groups) * spec.kernel * spec.kernel
    return macs, ho, wo


def _mbconv_macs(cfg: MBConvConfig, h: int, w: int):
    mid = cfg.mid_channels
    macs, h, w = _conv_spec_macs(Conv2dSpec(cfg.in_channels, mid), h, w)
    m2, h, w = _conv_spec_macs(
        Conv2dSpec(mid, mid, kernel=3, stride=cfg.stride, pad=1, groups=mid), h, w
    )
    m3, h, w = _conv_spec_macs(Conv2dSpec(mid, cfg.out_channels), h, w)
    return macs + m2 + m3, h, w


def _dsconv_macs(cfg: DsConvConfig, h: int, w: int):
    macs, h, w = _conv_spec_macs(
        Conv2dSpec(cfg.in_channels, cfg.in_channels, kernel=3, stride=cfg.stride, pad=1, groups=cfg.in_channels),
        h,
        w,
    )
    m2, h, w = _conv_spec_macs(Conv2dSpec(cfg.in_channels, cfg.out_channels), h, w)
    return macs + m2, h, w


def attention_branch_macs(n_tokens: int, d: int, heads: int) -> int:
    """Linear-form attention cost for one scale: the K/V reduction and the query
    pass are each N*d*d multiplies per head, plus N*d for each of the denominator
    reduction and division."""
    return heads * (2 * n_tokens * d * d + 2 * n_tokens * d)


def _msa_macs(cfg: MsaConfig, h: int, w: int):
    n_tokens = h * w
    macs, _, _ = _conv_spec_macs(Conv2dSpec(cfg.in_channels, cfg.qkv_channels), h, w)
    for k in cfg.scales:
        if k > 1:
            m_dw, _, _ = _conv_spec_macs(
                Conv2dSpec(cfg.qkv_channels, cfg.qkv_channels, kernel=k, pad=(k - 1) // 2, groups=cfg.qkv_channels),
                h,
                w,
            )
            m_pw, _, _ = _conv_spec_macs(
                Conv2dSpec(cfg.qkv_channels, cfg.qkv_channels, groups=cfg.agg_groups), h, w
            )
            macs += m_dw + m_pw
        if cfg.global_attention:
            macs += attention_branch_macs(n_tokens, cfg.d, cfg.heads)
    m_proj, _, _ = _conv_spec_macs(Conv2dSpec(cfg.concat_width, cfg.in_channels), h, w)
    return macs + m_proj, h, w


def _entry_macs(cfg, h: int, w: int):
    if isinstance(cfg, Conv2dSpec):
        return _conv_spec_macs(cfg, h, w)
    if isinstance(cfg, FcSpec):
        return cfg.in_features * cfg.out_features, h, w
    if isinstance(cfg, MBConvConfig):
        return _mbconv_macs(cfg, h, w)
    if isinstance(cfg, DsConvConfig):
        return _dsconv_macs(cfg, h, w)
    if isinstance(cfg, MsaBlockConfig):
        macs, h, w = _msa_macs(cfg.msa, h, w)
        m2, h, w = _mbconv_macs(cfg.mbconv, h, w)
        return macs + m2, h, w
    raise ConfigurationError(f"unknown layer config type {type(cfg).__name__}")


def _part_params(model: Model, prefix: str) -> int:
    total = 0
    for name, shape in weight_spec(model).items():
        if not name.startswith(prefix):
            continue
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("mean", "var"):
            continue
        total += math.prod(shape)
    return total


def macs_breakdown(model: Model, h: int, w: int):
    """Per-part (name, params, macs) rows for stem, stages, and head.

    Norms, activations, pooling, residual adds, and interpolation contribute no
    MACs by convention; attention is counted in its linear form.
    """
    if h % INPUT_DIVISOR != 0 or w % INPUT_DIVISOR != 0:
        raise InputError(
            f"resolution {h}x{w} must be divisible by {INPUT_DIVISOR} in both extents"
        )
    rows = []
    ch, cw = h, w
    stem_macs = 0
    for name, cfg in model.backbone.stem:
        m, ch, cw = _entry_macs(cfg, ch, cw)
        stem_macs += m
    rows.append(("stem", _part_params(model, "stem."), stem_macs))
    dims = {}
    for si, stage in enumerate(model.backbone.stages, start=1):
        stage_macs = 0
        for name, cfg in stage:
            m, ch, cw = _entry_macs(cfg, ch, cw)
            stage_macs += m
        dims[si] = (ch, cw)
        rows.append((f"stage{si}", _part_params(model, f"stage{si}."), stage_macs))

    head_macs = 0
    if model.task == "segmentation":
        head: SegHead = model.head
        h8, w8 = dims[2]
        for (name, spec), si in zip(head.in_proj, (2, 3, 4)):
            m, _, _ = _conv_spec_macs(spec, *dims[si])
            head_macs += m
        bh, bw = h8, w8
        for name, cfg in head.blocks:
            m, bh, bw = _entry_macs(cfg, bh, bw)
            head_macs += m
        m, _, _ = _conv_spec_macs(head.classifier, bh, bw)
        head_macs += m
    else:
        head: ClsHead = model.head
        m, _, _ = _conv_spec_macs(head.expand, 1, 1)
        head_macs += m
        head_macs += head.fc1.in_features * head.fc1.out_features
        head_macs += head.fc2.in_features * head.fc2.out_features
    rows.append(("head", _part_params(model, "head."), head_macs))
    return rows


def count_macs(model: Model, h: int, w: int) -> int:
    """Total multiply-accumulate count for one (1, 3, h, w) forward pass."""
    return sum(m for _, _, m in macs_breakdown(model, h, w))
