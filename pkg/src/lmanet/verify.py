"""Self-contained property checks behind the `lmanet verify` command.

Each check draws seeded random instances, measures its worst error against an
independent reference, and reports pass/fail against an explicit tolerance.
The suite is the fast CLI-facing sibling of the full test suite.
"""

from dataclasses import dataclass

import numpy as np

from .attention import (
    attend,
    multi_head_attention,
    relu_attention_fast,
    relu_attention_fast_backward,
    relu_attention_naive,
    softmax_attention,
    AttentionConfig,
)
from .msa import MsaConfig, MsaWeights, aggregate_scale
from . import tensor

ABS_TOL = 1e-6
REL_TOL = 1e-5


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    max_err: float
    tol: float
    detail: str = ""


def _mixed_tol_excess(got, want, abs_tol=ABS_TOL, rel_tol=REL_TOL) -> float:
    """Worst amount by which |got-want| exceeds max(abs_tol, rel_tol*|want|); <= 0 passes."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    allowance = np.maximum(abs_tol, rel_tol * np.abs(want))
    return float((np.abs(got - want) - allowance).max())


def _draw_qkv(rng, n, d):
    q = rng.standard_normal((n, d)).astype(np.float32)
    k = rng.standard_normal((n, d)).astype(np.float32)
    v = rng.standard_normal((n, d)).astype(np.float32)
    return q, k, v


def check_linearization(seed: int, max_n: int, eps: float) -> PropertyResult:
    """relu_fast output equals relu_naive within mixed tolerance."""
    ns = sorted({min(n, max_n) for n in (1, 2, 3, 8, 64, 256)})
    worst_diff = 0.0
    worst_excess = -np.inf
    worst_at = ""
    draws = 0
    for n in ns:
        for d in (1, 4, 32):
            for rep in range(3):
                rng = np.random.Generator(np.random.PCG64([seed, n, d, rep]))
                q, k, v = _draw_qkv(rng, n, d)
                fast = relu_attention_fast(q, k, v, eps)
                naive = relu_attention_naive(q, k, v, eps)
                excess = _mixed_tol_excess(fast, naive)
                worst_diff = max(worst_diff, float(np.abs(fast - naive).max()))
                draws += 1
                if excess > worst_excess:
                    worst_excess, worst_at = excess, f"n={n} d={d} rep={rep}"
    return PropertyResult(
        "linearization: relu_fast == relu_naive",
        worst_excess <= 0.0,
        worst_diff,
        ABS_TOL,
        f"{draws} draws, worst at {worst_at}",
    )


def check_scale_invariance(seed: int, max_n: int) -> PropertyResult:
    """Scaling Q or K by c > 0 leaves relu outputs unchanged (checked at eps=1e-9)."""
    n = max(2, min(64, max_n))
    worst_excess = -np.inf
    worst_diff = 0.0
    for rep in range(20):
        rng = np.random.Generator(np.random.PCG64([seed, 7, rep]))
        q, k, v = _draw_qkv(rng, n, 8)
        q = np.abs(q) + np.float32(0.1)
        k = np.abs(k) + np.float32(0.1)
        base = relu_attention_fast(q, k, v, 1e-9)
        for c in (0.1, 10.0):
            for scaled in (
                relu_attention_fast(q * np.float32(c), k, v, 1e-9),
                relu_attention_fast(q, k * np.float32(c), v, 1e-9),
            ):
                worst_excess = max(worst_excess, _mixed_tol_excess(scaled, base))
                worst_diff = max(worst_diff, float(np.abs(scaled.astype(np.float64) - base).max()))
    return PropertyResult(
        "scale invariance: relu(c*Q), relu(c*K) constant in c",
        worst_excess <= 0.0,
        worst_diff,
        REL_TOL,
    )


def check_permutation(seed: int, max_n: int) -> PropertyResult:
    """K/V joint permutation invariance and Q permutation equivariance, all kinds."""
    n = max(2, min(64, max_n))
    worst = 0.0
    for rep in range(10):
        rng = np.random.Generator(np.random.PCG64([seed, 11, rep]))
        q, k, v = _draw_qkv(rng, n, 8)
        perm = rng.permutation(n)
        for kind in ("softmax", "relu_naive", "relu_fast"):
            base = attend(q, k, v, kind)
            kv_perm = attend(q, k[perm], v[perm], kind)
            q_perm = attend(q[perm], k, v, kind)
            worst = max(worst, _mixed_tol_excess(kv_perm, base))
            worst = max(worst, _mixed_tol_excess(q_perm, base[perm]))
    return PropertyResult(
        "permutation: K/V invariance, Q equivariance", worst <= 0.0, max(0.0, worst), ABS_TOL
    )


def check_convexity(seed: int, max_n: int) -> PropertyResult:
    """With positive similarities and eps -> 0, outputs stay inside V's bounds."""
    n = max(2, min(64, max_n))
    worst = 0.0
    for rep in range(20):
        rng = np.random.Generator(np.random.PCG64([seed, 13, rep]))
        q, k, v = _draw_qkv(rng, n, 8)
        q = np.abs(q) + np.float32(0.1)
        k = np.abs(k) + np.float32(0.1)
        for kind in ("relu_naive", "relu_fast"):
            out = attend(q, k, v, kind, eps=1e-9).astype(np.float64)
            lo = v.min(axis=0).astype(np.float64)
            hi = v.max(axis=0).astype(np.float64)
            worst = max(worst, float((lo[None, :] - out).max()), float((out - hi[None, :]).max()))
    return PropertyResult("convexity: outputs within per-column V bounds", worst <= ABS_TOL, worst, ABS_TOL)


def check_gradients(seed: int) -> PropertyResult:
    """Analytic backward against central finite differences of the float64 map."""

    def forward64(q, k, v, eps):
        qr = np.maximum(q, 0.0)
        kr = np.maximum(k, 0.0)
        num = qr @ (kr.T @ v)
        den = qr @ kr.sum(axis=0) + eps
        return num / den[:, None]

    def loss(args, g, eps):
        return float((forward64(*args, eps) * g).sum())

    n, d, eps, h = 6, 3, 1e-6, 1e-5
    worst = 0.0
    for rep in range(10):
        rng = np.random.Generator(np.random.PCG64([seed, 17, rep]))
        q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
        # keep entries away from the relu kink so difference quotients are clean
        q = np.where(np.abs(q) < 0.1, q + 0.25, q)
        k = np.where(np.abs(k) < 0.1, k + 0.25, k)
        g = rng.standard_normal((n, d))
        analytic = relu_attention_fast_backward(
            q.astype(np.float32), k.astype(np.float32), v.astype(np.float32), g.astype(np.float32), eps
        )
        inputs = [q, k, v]
        for which, grad in enumerate(analytic):
            num = np.zeros_like(inputs[which])
            for idx in np.ndindex(num.shape):
                args_up = [a.copy() if i == which else a for i, a in enumerate(inputs)]
                args_up[which][idx] += h
                args_dn = [a.copy() if i == which else a for i, a in enumerate(inputs)]
                args_dn[which][idx] -= h
                num[idx] = (loss(args_up, g, eps) - loss(args_dn, g, eps)) / (2 * h)
            denom = max(1.0, float(np.abs(num).max()))
            worst = max(worst, float(np.abs(grad.astype(np.float64) - num).max()) / denom)
    return PropertyResult("gradients: backward matches finite differences", worst <= 1e-3, worst, 1e-3)


def check_fusion(seed: int) -> PropertyResult:
    """Fused grouped aggregation equals per-group depthwise+dense pipelines."""
    worst = 0.0
    for rep in range(8):
        rng = np.random.Generator(np.random.PCG64([seed, 19, rep]))
        d = int(rng.integers(2, 6))
        heads = int(rng.integers(1, 4))
        k = int(rng.choice([3, 5]))
        h = int(rng.integers(3, 8))
        w = int(rng.integers(3, 8))
        cfg = MsaConfig(heads * d, d=d, scales=(1, k))
        c = cfg.qkv_channels
        qkv = rng.standard_normal((1, c, h, w)).astype(np.float32)
        dw = rng.standard_normal((c, 1, k, k)).astype(np.float32)
        pw = rng.standard_normal((c, d, 1, 1)).astype(np.float32)
        weights = MsaWeights(qkv=None, proj=None, norm=None, agg={k: (dw, pw)})
        fused = aggregate_scale(qkv, k, cfg, weights)
        parts = []
        for g in range(cfg.agg_groups):
            sl = slice(g * d, (g + 1) * d)
            y = tensor.conv2d(qkv[:, sl], dw[sl], stride=1, pad=(k - 1) // 2, groups=d)
            parts.append(tensor.conv2d(y, pw[sl]))
        unfused = tensor.concat_channels(parts)
        worst = max(worst, float(np.abs(fused - unfused).max()))
    return PropertyResult("fusion: grouped aggregation == per-group pipelines", worst <= ABS_TOL, worst, ABS_TOL)


def check_softmax(seed: int, max_n: int) -> PropertyResult:
    """Softmax weights are an explicit convex combination; N=1 returns V."""
    n = max(2, min(64, max_n))
    worst = 0.0
    for rep in range(10):
        rng = np.random.Generator(np.random.PCG64([seed, 23, rep]))
        q, k, v = _draw_qkv(rng, n, 8)
        scores = q.astype(np.float64) @ k.astype(np.float64).T / np.sqrt(8.0)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        want = weights @ v.astype(np.float64)
        worst = max(worst, _mixed_tol_excess(softmax_attention(q, k, v), want))
    single = softmax_attention(
        np.ones((1, 4), np.float32), np.ones((1, 4), np.float32), np.full((1, 4), 2.5, np.float32)
    )
    worst = max(worst, float(np.abs(single - 2.5).max()))
    return PropertyResult("softmax: matches explicit weights, N=1 is V", worst <= 0.0, max(0.0, worst), ABS_TOL)


def check_dead_query(eps: float) -> PropertyResult:
    """All-negative queries produce zero rows when eps > 0; eps = 0 divides by zero."""
    q = np.full((3, 4), -1.0, np.float32)
    k = np.abs(np.random.Generator(np.random.PCG64(29)).standard_normal((3, 4))).astype(np.float32)
    v = np.random.Generator(np.random.PCG64(31)).standard_normal((3, 4)).astype(np.float32)
    if eps > 0:
        out = relu_attention_fast(q, k, v, eps)
        worst = float(np.abs(out).max())
        return PropertyResult("dead query: zero output under eps guard", worst == 0.0, worst, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = relu_attention_fast(q, k, v, 0.0)
    finite = bool(np.isfinite(out).all())
    return PropertyResult(
        "dead query: eps=0 divides by zero",
        False,
        float("nan"),
        0.0,
        f"EXPECTED-FAIL: without the eps guard dead queries divide 0 by 0 (finite output: {finite})",
    )


def check_multi_head(seed: int, max_n: int) -> PropertyResult:
    """Two heads equal two independent single-head calls on channel slices."""
    n = max(2, min(32, max_n))
    d = 4
    rng = np.random.Generator(np.random.PCG64([seed, 37]))
    tokens = rng.standard_normal((n, 2 * 3 * d)).astype(np.float32)
    cfg = AttentionConfig(d=d, heads=2, kind="relu_fast")
    got = multi_head_attention(tokens, cfg)
    parts = []
    for hh in range(2):
        base = hh * 3 * d
        parts.append(
            relu_attention_fast(
                tokens[:, base : base + d],
                tokens[:, base + d : base + 2 * d],
                tokens[:, base + 2 * d : base + 3 * d],
                cfg.eps,
            )
        )
    want = np.concatenate(parts, axis=1)
    worst = float(np.abs(got - want).max())
    return PropertyResult("multi-head: equals per-head slices", worst == 0.0, worst, 0.0)


def run_suite(seed: int = 0, max_n: int = 256, eps: float = 1e-6) -> list:
    """All checks in a fixed order. eps flows to the eps-sensitive checks."""
    results = [
        check_linearization(seed, max_n, eps if eps > 0 else 1e-6),
        check_scale_invariance(seed, max_n),
        check_permutation(seed, max_n),
        check_convexity(seed, max_n),
        check_gradients(seed),
        check_fusion(seed),
        check_softmax(seed, max_n),
        check_multi_head(seed, max_n),
        check_dead_query(eps),
    ]
    return results
