"""Dense float32 tensor primitives in NCHW layout.

Conventions shared by every operation here and upstream:

* values are numpy float32 arrays; feature maps are (N, C, H, W), matrices (rows, cols)
* reductions (matmul, conv2d, pooling) accumulate in float64 and round once to float32
* there is no implicit broadcasting; shape agreement is checked and violations raise
  DimensionError with the offending extents in the message
* operations are pure: inputs are never written to

conv2d exposes three implementations behind one contract. "direct" evaluates each
output pixel as an explicit window reduction and exists as the reference path for
small shapes; "im2col" lowers to grouped matrix multiplication; "auto" picks a fast
route per kernel shape (pointwise matmul, shifted-slice accumulation for depthwise,
im2col otherwise). All paths agree within float rounding.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

DEFAULT_BN_EPS = 1e-5

_CONV_METHODS = ("auto", "direct", "im2col")


def _as_f32(x, name: str):
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float32)
    return x


def _require_rank(x, rank: int, name: str):
    if x.ndim != rank:
        raise DimensionError(f"{name}: expected rank {rank}, got rank {x.ndim} with shape {x.shape}")


def matmul(a, b):
    """Matrix product of two 2-D arrays, float64 accumulation, float32 result."""
    a = _as_f32(a, "a")
    b = _as_f32(b, "b")
    _require_rank(a, 2, "matmul: a")
    _require_rank(b, 2, "matmul: b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def relu(x):
    x = np.asarray(x, dtype=np.float32)
    return np.maximum(x, np.float32(0.0))


def hardswish(x):
    """x * clip(x + 3, 0, 6) / 6, elementwise."""
    x = np.asarray(x, dtype=np.float32)
    gate = np.clip(x + np.float32(3.0), np.float32(0.0), np.float32(6.0))
    return x * gate / np.float32(6.0)


def add(x, y):
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if x.shape != y.shape:
        raise DimensionError(f"add: shapes differ, {x.shape} vs {y.shape}")
    return x + y


def concat_channels(xs):
    """Concatenate feature maps along C. All maps must share N, H, W."""
    if not xs:
        raise DimensionError("concat_channels: empty input list")
    xs = [np.asarray(x, dtype=np.float32) for x in xs]
    for i, x in enumerate(xs):
        _require_rank(x, 4, f"concat_channels: input {i}")
    base = xs[0].shape
    for i, x in enumerate(xs[1:], start=1):
        if (x.shape[0], x.shape[2], x.shape[3]) != (base[0], base[2], base[3]):
            raise DimensionError(
                f"concat_channels: input {i} has shape {x.shape}, incompatible with {base}"
            )
    return np.concatenate(xs, axis=1)


def global_avg_pool(x):
    """Mean over H and W, keeping a 1x1 spatial extent: (N, C, H, W) -> (N, C, 1, 1)."""
    x = np.asarray(x, dtype=np.float32)
    _require_rank(x, 4, "global_avg_pool: x")
    out = x.astype(np.float64).mean(axis=(2, 3), keepdims=True)
    return out.astype(np.float32)


@dataclass(frozen=True)
class BnParams:
    """Inference-time batchnorm tensors, each of shape (C,)."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    @staticmethod
    def spec(channels: int) -> dict:
        return {
            "gamma": (channels,),
            "beta": (channels,),
            "mean": (channels,),
            "var": (channels,),
        }

    @staticmethod
    def from_params(params, prefix: str) -> "BnParams":
        return BnParams(
            gamma=params[prefix + "gamma"],
            beta=params[prefix + "beta"],
            mean=params[prefix + "mean"],
            var=params[prefix + "var"],
        )


def batchnorm_infer(x, gamma, beta, mean, var, eps: float = DEFAULT_BN_EPS):
    """Per-channel affine normalization with fixed statistics.

    out[n,c,h,w] = gamma[c] * (x[n,c,h,w] - mean[c]) / sqrt(var[c] + eps) + beta[c]
    """
    x = np.asarray(x, dtype=np.float32)
    _require_rank(x, 4, "batchnorm_infer: x")
    c = x.shape[1]
    stats = []
    for name, t in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        t = np.asarray(t, dtype=np.float32)
        if t.shape != (c,):
            raise DimensionError(f"batchnorm_infer: {name} has shape {t.shape}, expected ({c},)")
        stats.append(t)
    gamma, beta, mean, var = stats
    if np.any(var < 0):
        raise ParameterError("batchnorm_infer: variance must be nonnegative")
    denom = np.sqrt(var.astype(np.float64) + eps)
    if np.any(denom <= 0):
        raise ParameterError("batchnorm_infer: var + eps must be positive")
    scale = (gamma.astype(np.float64) / denom).astype(np.float32)
    shift = (beta.astype(np.float64) - mean.astype(np.float64) * (gamma.astype(np.float64) / denom))
    shift = shift.astype(np.float32)
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def apply_bn(x, p: BnParams, eps: float = DEFAULT_BN_EPS):
    return batchnorm_infer(x, p.gamma, p.beta, p.mean, p.var, eps)


def conv_out_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    """Output extent of a convolution along one axis: floor((E + 2p - k) / s) + 1."""
    span = extent + 2 * pad - kernel
    if span < 0:
        raise DimensionError(
            f"conv2d: kernel {kernel} does not fit extent {extent} with pad {pad}"
        )
    return span // stride + 1


def _conv_validate(x, w, bias, stride, pad, groups):
    _require_rank(x, 4, "conv2d: x")
    _require_rank(w, 4, "conv2d: w")
    if not (isinstance(stride, int) and stride >= 1):
        raise ParameterError(f"conv2d: stride must be an integer >= 1, got {stride!r}")
    if not (isinstance(pad, int) and pad >= 0):
        raise ParameterError(f"conv2d: pad must be an integer >= 0, got {pad!r}")
    if not (isinstance(groups, int) and groups >= 1):
        raise ParameterError(f"conv2d: groups must be an integer >= 1, got {groups!r}")
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    if cin % groups != 0:
        raise DimensionError(f"conv2d: in_channels {cin} not divisible by groups {groups}")
    if cout % groups != 0:
        raise DimensionError(f"conv2d: out_channels {cout} not divisible by groups {groups}")
    if cpg != cin // groups:
        raise DimensionError(
            f"conv2d: weight expects {cpg} channels per group, input provides {cin // groups}"
        )
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias has shape {bias.shape}, expected ({cout},)")
    ho = conv_out_extent(h, kh, stride, pad)
    wo = conv_out_extent(wd, kw, stride, pad)
    return ho, wo


def _pad_hw(x, pad: int):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv2d_direct(x, w, stride, pad, groups, ho, wo):
    n, cin, _, _ = x.shape
    cout, cpg, kh, kw = w.shape
    opg = cout // groups
    xp = _pad_hw(x.astype(np.float64), pad)
    w64 = w.astype(np.float64)
    out = np.empty((n, cout, ho, wo), dtype=np.float64)
    for b in range(n):
        for co in range(cout):
            g = co // opg
            ci0 = g * cpg
            for i in range(ho):
                for j in range(wo):
                    window = xp[b, ci0 : ci0 + cpg, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b, co, i, j] = np.sum(w64[co] * window, dtype=np.float64)
    return out


def _conv2d_im2col(x, w, stride, pad, groups, ho, wo):
    n, cin, _, _ = x.shape
    cout, cpg, kh, kw = w.shape
    xp = _pad_hw(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, cin, ho, wo, kh, kw) -> (n, groups, cpg*kh*kw, ho*wo)
    win = win.reshape(n, groups, cpg, ho, wo, kh, kw).transpose(0, 1, 2, 5, 6, 3, 4)
    cols = np.ascontiguousarray(win, dtype=np.float64).reshape(n, groups, cpg * kh * kw, ho * wo)
    wm = w.astype(np.float64).reshape(groups, cout // groups, cpg * kh * kw)
    out = np.matmul(wm[None, :, :, :], cols)
    return out.reshape(n, cout, ho, wo)


def _conv2d_pointwise(x, w, groups):
    # 1x1 kernel, stride 1, pad 0: a grouped channel mix
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    cpg = cin // groups
    xm = x.reshape(n, groups, cpg, h * wd).astype(np.float64)
    wm = w.astype(np.float64).reshape(groups, cout // groups, cpg)
    out = np.matmul(wm[None, :, :, :], xm)
    return out.reshape(n, cout, h, wd)


def _conv2d_depthwise(x, w, stride, pad, ho, wo):
    # groups == cin == cout: accumulate shifted strided slices per kernel tap
    n, cin, _, _ = x.shape
    _, _, kh, kw = w.shape
    xp = _pad_hw(x.astype(np.float64), pad)
    w64 = w.astype(np.float64)
    out = np.zeros((n, cin, ho, wo), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            tap = w64[:, 0, u, v][None, :, None, None]
            out += tap * xp[:, :, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride]
    return out


def conv2d(x, w, bias=None, *, stride: int = 1, pad: int = 0, groups: int = 1, method: str = "auto"):
    """Grouped 2-D convolution (cross-correlation) over NCHW maps.

    x: (N, C_in, H, W); w: (C_out, C_in/groups, kh, kw); bias: (C_out,) or None.
    Output extent per axis is floor((E + 2*pad - k) / stride) + 1.
    """
    x = _as_f32(x, "x")
    w = _as_f32(w, "w")
    if bias is not None:
        bias = _as_f32(bias, "bias")
    if method not in _CONV_METHODS:
        raise ParameterError(f"conv2d: unknown method {method!r}, expected one of {_CONV_METHODS}")
    ho, wo = _conv_validate(x, w, bias, stride, pad, groups)
    n, cin, _, _ = x.shape
    cout, cpg, kh, kw = w.shape

    if method == "direct":
        out = _conv2d_direct(x, w, stride, pad, groups, ho, wo)
    elif method == "im2col":
        out = _conv2d_im2col(x, w, stride, pad, groups, ho, wo)
    elif kh == 1 and kw == 1 and stride == 1 and pad == 0:
        out = _conv2d_pointwise(x, w, groups)
    elif groups == cin and cpg == 1 and cout == cin:
        out = _conv2d_depthwise(x, w, stride, pad, ho, wo)
    else:
        out = _conv2d_im2col(x, w, stride, pad, groups, ho, wo)

    if bias is not None:
        out = out + bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def _upsample_axis(extent: int, out_extent: int):
    # half-pixel-center source coordinates, clamped to the valid range
    src = (np.arange(out_extent, dtype=np.float64) + 0.5) * (extent / out_extent) - 0.5
    src = np.clip(src, 0.0, extent - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, extent - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample(x, out_h: int, out_w: int):
    """Bilinear interpolation of (N, C, H, W) to (N, C, out_h, out_w), upscale only."""
    x = np.asarray(x, dtype=np.float32)
    _require_rank(x, 4, "bilinear_upsample: x")
    n, c, h, w = x.shape
    if out_h < h or out_w < w:
        raise ParameterError(
            f"bilinear_upsample: target {out_h}x{out_w} smaller than input {h}x{w}"
        )
    r0, r1, fr = _upsample_axis(h, out_h)
    c0, c1, fc = _upsample_axis(w, out_w)
    xf = x.astype(np.float64)
    rows = xf[:, :, r0, :] * (1.0 - fr)[None, None, :, None] + xf[:, :, r1, :] * fr[None, None, :, None]
    out = rows[:, :, :, c0] * (1.0 - fc)[None, None, None, :] + rows[:, :, :, c1] * fc[None, None, None, :]
    return out.astype(np.float32)
