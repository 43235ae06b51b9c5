"""Command-line interface.

Subcommands: verify, bench, macs, infer, init, dump-config. Every command exits
0 on success and nonzero with a one-line reason on failure, so CI can consume
`lmanet verify` directly.
"""

import argparse
import sys

import numpy as np

from . import bench as bench_mod
from . import io as io_mod
from . import model as model_mod
from . import verify as verify_mod
from .attention import ATTENTION_KINDS
from .errors import InputError, LmaError

# (variant, task, (h, w)) -> (params, macs) published reference points
REFERENCE_COSTS = {
    ("B1", "classification", (224, 224)): (9.1e6, 0.52e9),
    ("B1", "classification", (288, 288)): (9.1e6, 0.86e9),
    ("B2", "classification", (256, 256)): (24e6, 2.1e9),
    ("B3", "classification", (224, 224)): (49e6, 4.0e9),
    ("B3", "classification", (288, 288)): (49e6, 6.5e9),
    ("B0", "segmentation", (960, 1920)): (0.7e6, 3.9e9),
    ("B1", "segmentation", (896, 1792)): (4.8e6, 19e9),
    ("B2", "segmentation", (1024, 2048)): (15e6, 74e9),
    ("B3", "segmentation", (1184, 2368)): (40e6, 240e9),
}
PARAM_BAND = 0.15
MACS_BAND = 0.20


def _fmt_count(x: float) -> str:
    if x >= 1e9:
        return f"{x / 1e9:.3g}G"
    if x >= 1e6:
        return f"{x / 1e6:.3g}M"
    if x >= 1e3:
        return f"{x / 1e3:.3g}K"
    return f"{x:.0f}"


def _parse_res(text: str) -> tuple:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            h = w = int(parts[0])
        elif len(parts) == 2:
            h, w = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise InputError(f"bad resolution {text!r}, expected H or HxW (e.g. 224 or 960x1920)") from None
    if h < 1 or w < 1:
        raise InputError(f"resolution must be positive, got {text!r}")
    return h, w


def _parse_int_list(text: str, flag: str) -> list:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InputError(f"{flag} expects a comma-separated integer list, got {text!r}") from None


def cmd_verify(args) -> int:
    results = verify_mod.run_suite(seed=args.seed, max_n=args.max_n, eps=args.eps)
    failed = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.name:<48} max_err={r.max_err:.3e} tol={r.tol:.1e}"
        if r.detail:
            line += f"  [{r.detail}]"
        print(line)
        if not r.passed:
            failed.append(r)
    if failed:
        print(f"{len(failed)} of {len(results)} properties failed (seed {args.seed})")
        return 1
    print(f"all {len(results)} properties passed (seed {args.seed})")
    return 0


def cmd_bench(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    ns = _parse_int_list(args.ns, "--ns")
    records = bench_mod.scaling_experiment(
        kinds,
        ns,
        d=args.d,
        heads=args.heads,
        warmup=args.warmup,
        repeats=args.repeats,
        seed=args.seed,
    )
    bench_mod.write_csv(records, args.out)
    print(f"wrote {len(records)} rows to {args.out}")
    plot_path = args.plot
    if plot_path is None:
        out = str(args.out)
        plot_path = (out[: -len(".csv")] if out.endswith(".csv") else out) + ".png"
    bench_mod.plot_scaling(records, plot_path)
    print(f"wrote scaling figure to {plot_path}")
    by_kind = {k: [r for r in records if r.kind == k] for k in kinds}
    for kind, rows in by_kind.items():
        if len({r.n for r in rows}) >= 4:
            print(f"slope {kind}: {bench_mod.fit_loglog_slope(rows):.3f}")
        else:
            print(f"slope {kind}: needs >= 4 token counts")
    n_max = max(ns)
    at_max = {k: next(r.median_ns for r in rows if r.n == n_max) for k, rows in by_kind.items()}
    for kind, ns_med in sorted(at_max.items()):
        print(f"median at N={n_max} {kind}: {ns_med / 1e6:.3f} ms")
    if "relu_fast" in at_max and "softmax" in at_max:
        print(f"softmax/relu_fast time ratio at N={n_max}: {at_max['softmax'] / at_max['relu_fast']:.1f}x")
    return 0


def cmd_macs(args) -> int:
    h, w = _parse_res(args.res)
    m = model_mod.build_model(args.variant, args.task, args.classes)
    rows = model_mod.macs_breakdown(m, h, w)
    total_params = model_mod.count_params(m)
    total_macs = sum(r[2] for r in rows)
    print(f"{m.variant.name} {m.task} at {h}x{w}, {m.n_classes} classes")
    print(f"{'part':<10} {'params':>12} {'macs':>16}")
    for name, params, macs in rows:
        print(f"{name:<10} {params:>12} {macs:>16}")
    print(f"{'total':<10} {total_params:>12} {total_macs:>16}")
    print(f"totals: {_fmt_count(total_params)} params, {_fmt_count(total_macs)} MACs")
    key = (m.variant.name, m.task, (h, w))
    if key in REFERENCE_COSTS:
        ref_params, ref_macs = REFERENCE_COSTS[key]
        dp = (total_params - ref_params) / ref_params
        dm = (total_macs - ref_macs) / ref_macs
        p_ok = abs(dp) <= PARAM_BAND
        m_ok = abs(dm) <= MACS_BAND
        print(
            f"params vs reference {_fmt_count(ref_params)}: {dp:+.1%} "
            f"({'OK' if p_ok else 'OUT OF BAND'}, band +-{PARAM_BAND:.0%})"
        )
        print(
            f"MACs vs reference {_fmt_count(ref_macs)}: {dm:+.1%} "
            f"({'OK' if m_ok else 'OUT OF BAND'}, band +-{MACS_BAND:.0%})"
        )
        if not (p_ok and m_ok):
            return 1
    return 0


def cmd_infer(args) -> int:
    m = model_mod.build_model(args.variant, "segmentation", args.classes)
    params = io_mod.load_checkpoint(args.ckpt)
    io_mod.check_params_match(m, params)
    image = io_mod.load_ppm(args.image)
    logits = model_mod.model_forward(m, image, params)
    class_map = np.argmax(logits[0], axis=0).astype(np.int64)
    io_mod.save_pgm(class_map, args.out)
    h, w = class_map.shape
    print(f"wrote {w}x{h} class map ({args.classes} classes) to {args.out}")
    return 0


def cmd_init(args) -> int:
    m = model_mod.build_model(args.variant, args.task, args.classes)
    params = io_mod.init_weights(m, seed=args.seed)
    io_mod.save_checkpoint(params, args.out)
    n = model_mod.count_params(m)
    print(f"wrote {len(params)} tensors ({_fmt_count(n)} params) to {args.out}")
    return 0


def cmd_dump_config(args) -> int:
    v = model_mod.VARIANTS[args.variant]
    print(f"variant {v.name}")
    print(f"widths C = {v.widths}")
    print(f"depths L = {v.depths}")
    print(f"seg head: C = {v.head_width}, L = {v.head_depth}")
    print(f"attention: d = {model_mod.ATTENTION_DIM}, scales = {list(model_mod.DEFAULT_SCALES)}")
    stage_heads = [max(1, c // model_mod.ATTENTION_DIM) for c in v.widths[3:]]
    print(f"attention heads (stage3, stage4) = {tuple(stage_heads)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmanet",
        description="multi-scale ReLU linear attention: verification, benchmarks, cost reports, demo inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the property suite (equivalence, invariances, gradients)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-n", type=int, default=256, help="largest token count used by the checks")
    p.add_argument("--eps", type=float, default=1e-6, help="attention denominator guard; 0 shows the hazard")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time attention kernels across token counts")
    p.add_argument("--kinds", default="relu_fast,softmax", help="comma-separated kernel kinds")
    p.add_argument("--ns", default="256,512,1024,2048,4096,8192", help="comma-separated token counts")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--repeats", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.csv", help="CSV output path")
    p.add_argument("--plot", default=None, help="figure output path (default: CSV path with .png)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("macs", help="analytic per-part parameter and MAC table")
    p.add_argument("--variant", choices=sorted(model_mod.VARIANTS), required=True)
    p.add_argument("--task", choices=["seg", "cls", "segmentation", "classification"], default="seg")
    p.add_argument("--res", default="512x1024", help="input resolution, H or HxW, divisible by 32")
    p.add_argument("--classes", type=int, default=None)
    p.set_defaults(func=cmd_macs)

    p = sub.add_parser("infer", help="segment one PPM image with a checkpoint")
    p.add_argument("--variant", choices=sorted(model_mod.VARIANTS), required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="binary P6 PPM, dims divisible by 32")
    p.add_argument("--classes", type=int, default=model_mod.SEG_DEFAULT_CLASSES)
    p.add_argument("--out", required=True, help="P5 PGM class map path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("init", help="write a deterministic random checkpoint")
    p.add_argument("--variant", choices=sorted(model_mod.VARIANTS), required=True)
    p.add_argument("--task", choices=["seg", "cls", "segmentation", "classification"], default="seg")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("dump-config", help="print the width/depth table for a variant")
    p.add_argument("variant", choices=sorted(model_mod.VARIANTS))
    p.set_defaults(func=cmd_dump_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LmaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
