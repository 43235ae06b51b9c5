"""Attention kernels over token matrices.

Tokens are rows of (N, d) float32 matrices. Three kinds share one calling
convention:

* ``softmax``: scaled dot-product attention, exp similarities row-normalized
  with max subtraction. Materializes the N x N weight matrix.
* ``relu_naive``: similarity is ReLU(Q) ReLU(K)^T, normalized per query by the
  row sum plus eps. Also materializes N x N; this is the reference semantics.
* ``relu_fast``: the same map reassociated. Because the similarity is a plain
  product of nonnegative features, sum_j ReLU(K_j)^T V_j and sum_j ReLU(K_j)
  can be reduced once into a (d, d) matrix and a (d,) vector shared by every
  query, so cost and auxiliary memory are linear in N.

relu_fast and relu_naive compute the same function; they differ only in
floating-point rounding. relu_attention_fast_backward gives analytic gradients
of the fast map. All kernels accumulate in float64 and return float32.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

ATTENTION_KINDS = ("softmax", "relu_naive", "relu_fast")

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class AttentionConfig:
    """Per-head geometry plus the kernel choice used by multi_head_attention."""

    d: int
    heads: int = 1
    kind: str = "relu_fast"
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError(f"AttentionConfig: d must be >= 1, got {self.d}")
        if self.heads < 1:
            raise ConfigurationError(f"AttentionConfig: heads must be >= 1, got {self.heads}")
        if self.kind not in ATTENTION_KINDS:
            raise ConfigurationError(
                f"AttentionConfig: unknown kind {self.kind!r}, expected one of {ATTENTION_KINDS}"
            )
        if not (self.eps >= 0.0):
            raise ConfigurationError(f"AttentionConfig: eps must be >= 0, got {self.eps}")

    @property
    def token_width(self) -> int:
        return 3 * self.heads * self.d


def _check_qkv(q, k, v):
    out = []
    for name, t in (("q", q), ("k", k), ("v", v)):
        t = np.asarray(t, dtype=np.float32)
        if t.ndim != 2:
            raise DimensionError(f"attention: {name} must be rank 2, got shape {t.shape}")
        out.append(t)
    q, k, v = out
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"attention: q and k widths differ, {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention: k and v row counts differ, {k.shape} vs {v.shape}")
    return q, k, v


def softmax_attention(q, k, v):
    """Row-softmax of QK^T / sqrt(d), applied to V."""
    q, k, v = _check_qkv(q, k, v)
    d = q.shape[1]
    scores = (q.astype(np.float64) @ k.astype(np.float64).T) / np.sqrt(float(d))
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    return (weights @ v.astype(np.float64)).astype(np.float32)


def relu_attention_naive(q, k, v, eps: float = DEFAULT_EPS):
    """ReLU-similarity attention with the N x N matrix materialized.

    sim = ReLU(Q) ReLU(K)^T; out_i = sum_j sim_ij V_j / (sum_j sim_ij + eps).
    """
    q, k, v = _check_qkv(q, k, v)
    qr = np.maximum(q.astype(np.float64), 0.0)
    kr = np.maximum(k.astype(np.float64), 0.0)
    sim = qr @ kr.T
    den = sim.sum(axis=1) + eps
    out = (sim @ v.astype(np.float64)) / den[:, None]
    return out.astype(np.float32)


def relu_attention_fast(q, k, v, eps: float = DEFAULT_EPS):
    """ReLU-similarity attention in linear time and memory.

    Reduces K and V once: S = ReLU(K)^T V (d x d), z = sum_j ReLU(K_j) (d,).
    Then out_i = (ReLU(Q_i) S) / (ReLU(Q_i) . z + eps). No N x N buffer exists.
    """
    q, k, v = _check_qkv(q, k, v)
    qr = np.maximum(q.astype(np.float64), 0.0)
    kr = np.maximum(k.astype(np.float64), 0.0)
    s = kr.T @ v.astype(np.float64)
    z = kr.sum(axis=0)
    num = qr @ s
    den = qr @ z + eps
    return (num / den[:, None]).astype(np.float32)


def relu_attention_fast_backward(q, k, v, d_out, eps: float = DEFAULT_EPS):
    """Gradients of relu_attention_fast w.r.t. q, k, v.

    d_out is the upstream gradient with the same shape as the output. The ReLU
    subgradient at 0 is taken as 0. Returns (dq, dk, dv) as float32.
    """
    q, k, v = _check_qkv(q, k, v)
    d_out = np.asarray(d_out, dtype=np.float32)
    if d_out.shape != (q.shape[0], v.shape[1]):
        raise DimensionError(
            f"attention backward: d_out has shape {d_out.shape}, expected {(q.shape[0], v.shape[1])}"
        )
    q64 = q.astype(np.float64)
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    g = d_out.astype(np.float64)

    qr = np.maximum(q64, 0.0)
    kr = np.maximum(k64, 0.0)
    s = kr.T @ v64
    z = kr.sum(axis=0)
    num = qr @ s
    den = qr @ z + eps
    inv = 1.0 / den

    g_num = g * inv[:, None]
    g_den = -(g * num).sum(axis=1) * inv * inv

    d_qr = g_num @ s.T + g_den[:, None] * z[None, :]
    d_s = qr.T @ g_num
    d_z = qr.T @ g_den
    d_kr = v64 @ d_s.T + d_z[None, :]
    d_v = kr @ d_s

    dq = d_qr * (q64 > 0.0)
    dk = d_kr * (k64 > 0.0)
    return dq.astype(np.float32), dk.astype(np.float32), d_v.astype(np.float32)


def attend(q, k, v, kind: str = "relu_fast", eps: float = DEFAULT_EPS):
    """Dispatch to one attention kernel by name. softmax ignores eps."""
    if kind == "softmax":
        return softmax_attention(q, k, v)
    if kind == "relu_naive":
        return relu_attention_naive(q, k, v, eps)
    if kind == "relu_fast":
        return relu_attention_fast(q, k, v, eps)
    raise ConfigurationError(f"attend: unknown kind {kind!r}, expected one of {ATTENTION_KINDS}")


def multi_head_attention(tokens, cfg: AttentionConfig):
    """Run cfg.heads independent heads over packed tokens.

    tokens: (N, heads * 3d) with per-head contiguous [q | k | v] channel blocks,
    so head h occupies columns [h*3d, (h+1)*3d). Returns (N, heads * d) with the
    per-head outputs concatenated in head order.
    """
    tokens = np.asarray(tokens, dtype=np.float32)
    if tokens.ndim != 2:
        raise DimensionError(f"multi_head_attention: tokens must be rank 2, got {tokens.shape}")
    if tokens.shape[1] != cfg.token_width:
        raise ConfigurationError(
            f"multi_head_attention: token width {tokens.shape[1]} != heads*3*d = {cfg.token_width}"
        )
    d = cfg.d
    outs = []
    for h in range(cfg.heads):
        base = h * 3 * d
        q = tokens[:, base : base + d]
        k = tokens[:, base + d : base + 2 * d]
        v = tokens[:, base + 2 * d : base + 3 * d]
        outs.append(attend(q, k, v, cfg.kind, cfg.eps))
    return np.concatenate(outs, axis=1)
