"""Microbenchmark harness for the attention kernels.

Timing is wall-clock via time.perf_counter_ns with explicit warmup, the median
over repeats reported. BLAS pools are pinned to one thread for the duration of
a measurement so complexity fits are not confounded by adaptive threading.
The analytic MAC column uses the same accounting as the model counter.
"""

import csv
import math
import statistics
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import ATTENTION_KINDS, attend
from .errors import ConfigurationError, ParameterError
from .model import attention_branch_macs

MIN_N = 64
MIN_REPEATS = 5

_sink = 0.0


def _consume(out):
    # keep a data dependency on the result so the measured call cannot be skipped
    global _sink
    if out is None:
        return
    arr = np.asarray(out)
    if arr.size:
        _sink += float(arr.flat[0])


def time_samples(thunk, warmup: int = 3, repeats: int = 11) -> list:
    """Raw per-call wall times in nanoseconds; warmup calls are not recorded."""
    if not (isinstance(warmup, int) and warmup >= 1):
        raise ParameterError(f"warmup must be an integer >= 1, got {warmup!r}")
    if not (isinstance(repeats, int) and repeats >= MIN_REPEATS):
        raise ParameterError(f"repeats must be an integer >= {MIN_REPEATS}, got {repeats!r}")
    for _ in range(warmup):
        _consume(thunk())
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        out = thunk()
        t1 = time.perf_counter_ns()
        _consume(out)
        samples.append(t1 - t0)
    return samples


def time_op(thunk, warmup: int = 3, repeats: int = 11) -> int:
    """Median wall time of thunk() in nanoseconds."""
    return int(statistics.median(time_samples(thunk, warmup, repeats)))


@dataclass(frozen=True)
class BenchRecord:
    kind: str
    n: int
    d: int
    heads: int
    warmup: int
    repeats: int
    median_ns: int
    macs: int


def attention_macs(kind: str, n: int, d: int, heads: int = 1) -> int:
    """Analytic MACs for one multi-head attention call on n tokens.

    Both relu kinds are counted via the linear form; softmax is quadratic:
    N*N*d for similarities plus N*N*d for the weighted value sum, per head.
    """
    if kind not in ATTENTION_KINDS:
        raise ConfigurationError(f"unknown kind {kind!r}, expected one of {ATTENTION_KINDS}")
    if kind == "softmax":
        return heads * 2 * n * n * d
    return attention_branch_macs(n, d, heads)


def scaling_experiment(
    kinds,
    ns,
    d: int = 32,
    heads: int = 1,
    *,
    warmup: int = 3,
    repeats: int = 11,
    seed: int = 0,
) -> list:
    """Time each kind across token counts ns, one BenchRecord per (kind, n)."""
    kinds = list(kinds)
    if not kinds:
        raise ConfigurationError("scaling_experiment: no kinds given")
    for kind in kinds:
        if kind not in ATTENTION_KINDS:
            raise ConfigurationError(f"unknown kind {kind!r}, expected one of {ATTENTION_KINDS}")
    ns = [int(n) for n in ns]
    if not ns:
        raise ParameterError("scaling_experiment: no token counts given")
    if any(n < MIN_N for n in ns):
        raise ParameterError(f"token counts must be >= {MIN_N}, got {ns}")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ParameterError(f"token counts must be strictly increasing, got {ns}")
    if d < 1 or heads < 1:
        raise ParameterError(f"d and heads must be >= 1, got d={d} heads={heads}")

    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    with threadpool_limits(limits=1):
        for n in ns:
            triples = [
                tuple(rng.standard_normal((n, d)).astype(np.float32) for _ in range(3))
                for _ in range(heads)
            ]
            for kind in kinds:
                def thunk(kind=kind, triples=triples):
                    out = None
                    for q, k, v in triples:
                        out = attend(q, k, v, kind)
                    return out

                median = time_op(thunk, warmup=warmup, repeats=repeats)
                records.append(
                    BenchRecord(
                        kind=kind,
                        n=n,
                        d=d,
                        heads=heads,
                        warmup=warmup,
                        repeats=repeats,
                        median_ns=median,
                        macs=attention_macs(kind, n, d, heads),
                    )
                )
    return records


def fit_loglog_slope(records) -> float:
    """Least-squares slope of log(median_ns) against log(n).

    Records must share one kind and cover at least four distinct token counts.
    """
    records = list(records)
    kinds = {r.kind for r in records}
    if len(kinds) != 1:
        raise ParameterError(f"slope fit needs exactly one kind, got {sorted(kinds)}")
    ns = [r.n for r in records]
    if len(set(ns)) < 4:
        raise ParameterError(f"slope fit needs >= 4 distinct token counts, got {sorted(set(ns))}")
    xs = np.log([float(r.n) for r in records])
    ys = np.log([max(1.0, float(r.median_ns)) for r in records])
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


_CSV_FIELDS = [f.name for f in fields(BenchRecord)]


def write_csv(records, path):
    """One row per record, header always present, LF line endings."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(asdict(r))


def read_csv(path) -> list:
    """Inverse of write_csv."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                BenchRecord(
                    kind=row["kind"],
                    n=int(row["n"]),
                    d=int(row["d"]),
                    heads=int(row["heads"]),
                    warmup=int(row["warmup"]),
                    repeats=int(row["repeats"]),
                    median_ns=int(row["median_ns"]),
                    macs=int(row["macs"]),
                )
            )
    return out


def plot_scaling(records, path):
    """Log-log runtime-vs-N figure with the fitted slope per kind, written to path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = list(records)
    if not records:
        raise ParameterError("plot_scaling: no records")
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for kind in sorted({r.kind for r in records}):
        rows = sorted((r for r in records if r.kind == kind), key=lambda r: r.n)
        xs = [r.n for r in rows]
        ys = [r.median_ns / 1e6 for r in rows]
        label = kind
        if len({r.n for r in rows}) >= 4:
            label = f"{kind} (slope {fit_loglog_slope(rows):.2f})"
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("tokens N")
    ax.set_ylabel("median wall time (ms)")
    ax.set_title("attention runtime scaling")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
