"""Shared test helpers: seeded draws and reference oracles kept independent of
the library's own compute paths."""

import numpy as np


def rng(*seed_parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(list(seed_parts)))


def assert_close(got, want, abs_tol=1e-6, rel_tol=1e-5, msg=""):
    """Elementwise |got-want| <= max(abs_tol, rel_tol*|want|)."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    assert got.shape == want.shape, f"shape mismatch {got.shape} vs {want.shape} {msg}"
    allowance = np.maximum(abs_tol, rel_tol * np.abs(want))
    diff = np.abs(got - want)
    worst = float((diff - allowance).max()) if diff.size else 0.0
    assert worst <= 0.0, f"max |diff|={diff.max():.3e} exceeds tolerance by {worst:.3e} {msg}"


def relu_attention_f64(q, k, v, eps):
    """Reference ReLU attention, materialized similarities, all float64."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    sim = np.maximum(q, 0.0) @ np.maximum(k, 0.0).T
    den = sim.sum(axis=1) + eps
    return (sim @ v) / den[:, None]


def softmax_attention_f64(q, k, v):
    """Reference softmax attention with explicit weight matrix, all float64."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scores = q @ k.T / np.sqrt(float(q.shape[1]))
    w = np.exp(scores - scores.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return w @ v


def matmul_loops(a, b):
    """Triple-loop float64 matrix product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for t in range(a.shape[1]):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_loops(x, w, bias=None, stride=1, pad=0, groups=1):
    """Plain-loop float64 grouped convolution for small shapes."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    opg = cout // groups
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for co in range(cout):
            g = co // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cpg):
                        for u in range(kh):
                            for t in range(kw):
                                acc += w[co, ci, u, t] * xp[b, g * cpg + ci, i * stride + u, j * stride + t]
                    out[b, co, i, j] = acc
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out
