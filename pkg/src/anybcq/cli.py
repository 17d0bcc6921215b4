"""Command-line surface: quantize / refine / gemv / bench / inspect.

Thin client over the library; every command reads and writes files and is
deterministic given its flags and inputs (timing fields excepted). Exit
codes: 0 success, 2 bad flags or validation, 3 file/I-O problems,
4 numeric failure. Errors go to stderr only. The ANYBCQ_THREADS
environment variable caps worker parallelism (0 = one per CPU).
"""

from __future__ import annotations

import argparse
import sys
import zlib

import numpy as np

from . import __version__
from .bcq import QuantConfig
from .calibrate import GD_EPOCHS, GD_LEARNING_RATE, apply_scales, refine_scales
from .errors import AnyBcqError, FileFormatError, NonFiniteError, UsageError
from .gemv import GemvEngine, bench, render_bench_csv, render_bench_text
from .model_format import (
    deserialize,
    footprint,
    render_footprint_kv,
    render_footprint_text,
    serialize,
)
from .progressive import build_multiprecision, precision_errors
from .tensor_io import load_matrix, random_gaussian, save_matrix

# shapes of the canonical synthetic bench suite (rows x cols)
BENCH_SUITE = ((4096, 14336), (5120, 17920), (8192, 28672))

_MODES = {"sym": "symmetric", "asym": "asymmetric",
          "symmetric": "symmetric", "asymmetric": "asymmetric"}


def _parse_bits(spec: str) -> tuple[int, int]:
    try:
        if ":" in spec:
            lo_s, hi_s = spec.split(":", 1)
            lo, hi = int(lo_s), int(hi_s)
        else:
            lo = hi = int(spec)
    except ValueError as exc:
        raise UsageError(f"--bits expects P or L:H, got {spec!r}") from exc
    if not 1 <= lo <= hi:
        raise UsageError(f"--bits range must satisfy 1 <= L <= H, got {spec!r}")
    return lo, hi


def _parse_shape(spec: str) -> tuple[int, int]:
    try:
        rows_s, cols_s = spec.lower().split("x", 1)
        rows, cols = int(rows_s), int(cols_s)
    except ValueError as exc:
        raise UsageError(f"expected RxC, got {spec!r}") from exc
    if rows < 1 or cols < 1:
        raise UsageError(f"shape dims must be >= 1, got {spec!r}")
    return rows, cols


def _load_or_random(args) -> np.ndarray:
    if args.input is None and args.random is None:
        raise UsageError("one of --input or --random is required")
    if args.input is not None and args.random is not None:
        raise UsageError("--input and --random are mutually exclusive")
    if args.input is not None:
        return load_matrix(args.input)
    rows, cols = _parse_shape(args.random)
    return random_gaussian(rows, cols, args.seed)


def _cmd_quantize(args) -> int:
    w = _load_or_random(args)
    p_lo, p_hi = _parse_bits(args.bits)
    cfg = QuantConfig(group_size=args.group, mode=_MODES[args.mode], cycles=args.cycles)
    model = build_multiprecision(w, p_lo, p_hi, cfg)
    serialize(model, args.out, scale_width=args.scale_width)
    errs = precision_errors(w, model)
    if args.format == "csv":
        print("p,relative_sq_error")
        for p in model.precisions:
            print(f"{p},{errs[p]:.8f}")
    else:
        print(f"{'p':>3}  relative_sq_error")
        for p in model.precisions:
            print(f"{p:>3}  {errs[p]:.8f}")
        print(f"wrote {args.out}")
    return 0


def _cmd_refine(args) -> int:
    model = deserialize(args.model)
    x = load_matrix(args.calib)
    w = load_matrix(args.weights)
    p = args.bits
    result = refine_scales(w, model, x, p, solver=args.solver,
                           epochs=args.epochs, lr=args.lr)
    serialize(apply_scales(model, p, result.scales), args.out or args.model,
              scale_width=args.scale_width)
    if args.solver == "gd":
        print(f"solver=gd epochs={args.epochs} lr={args.lr}")
    else:
        print(f"solver=exact ridge_fallback={str(result.ridge_fallback).lower()}")
    print(f"loss_before={result.loss_before:.8g}")
    print(f"loss_after={result.loss_after:.8g}")
    return 0


def _cmd_gemv(args) -> int:
    model = deserialize(args.model)
    x = load_matrix(args.x)
    if x.shape[1] != model.shape[1]:
        raise UsageError(f"input cols {x.shape[1]} != model cols {model.shape[1]}")
    engine = GemvEngine(model)
    run = engine.lut if args.path == "lut" else engine.naive
    out_rows = []
    plane_bytes = scale_bytes = 0
    for s in range(x.shape[0]):
        y, stats = run(args.bits, x[s])
        out_rows.append(y.astype(np.float32))
        plane_bytes += stats.plane_bytes_fetched
        scale_bytes += stats.scale_bytes_fetched
    y_mat = np.stack(out_rows)
    save_matrix(y_mat, args.out)
    checksum = zlib.crc32(y_mat.astype("<f4").tobytes())
    print(f"checksum=0x{checksum:08x}")
    print(f"plane_bytes={plane_bytes} scale_bytes={scale_bytes} path={args.path}")
    return 0


def _cmd_bench(args) -> int:
    if (args.model is None) == (args.shapes is None):
        raise UsageError("exactly one of --model or --shapes is required")
    rows = []
    if args.model is not None:
        model = deserialize(args.model)
        precisions = (list(model.precisions) if args.bits == "all"
                      else [int(b) for b in args.bits.split(",")])
        x = random_gaussian(1, model.shape[1], args.seed).ravel()
        rows += bench(model, precisions, x, repeats=args.repeats,
                      include_dense=args.dense)
    else:
        for spec in args.shapes.split(","):
            shape = _parse_shape(spec)
            w = random_gaussian(*shape, seed=args.seed)
            cfg = QuantConfig(group_size=args.group, cycles=1)
            model = build_multiprecision(w, 2, 4, cfg)
            precisions = ([2, 3, 4] if args.bits == "all"
                          else [int(b) for b in args.bits.split(",")])
            x = random_gaussian(1, shape[1], args.seed + 1).ravel()
            rows += bench(model, precisions, x, repeats=args.repeats,
                          include_dense=args.dense, dense_weights=w)
    print(render_bench_csv(rows) if args.format == "csv" else render_bench_text(rows))
    return 0


def _cmd_inspect(args) -> int:
    model = deserialize(args.model)
    report = footprint(
        model.shape[0], model.shape[1], model.config.group_size,
        model.p_lo, model.p_hi, model.config.mode, scale_width=args.scale_width,
    )
    if args.format == "kv":
        print(render_footprint_kv(report))
    elif args.format == "csv":
        print("bit,scale_bytes,binary_bytes,total_bytes")
        for row in report.per_precision:
            print(f"BCQ{row.precision},{row.scale_bytes},{row.binary_bytes},{row.total_bytes}")
        print(f"Multi-model,{report.shared_scale_bytes},"
              f"{sum(r.binary_bytes for r in report.per_precision)},{report.multi_model_total}")
        print(f"Proposed,{report.shared_scale_bytes},{report.shared_binary_bytes},"
              f"{report.shared_total}")
    else:
        print(f"model {args.model}: {model.shape[0]}x{model.shape[1]} "
              f"bits {model.p_lo}:{model.p_hi} group {model.config.group_size} "
              f"mode {model.config.mode}")
        print(render_footprint_text(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anybcq",
        description="Multi-precision binary-coded weight quantization toolkit",
    )
    parser.add_argument("--version", action="version", version=f"anybcq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="fit a multi-precision model")
    q.add_argument("--input", help="FMAT weight matrix")
    q.add_argument("--random", metavar="NxK", help="generate a seeded Gaussian matrix")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--bits", required=True, help="P for fixed precision or L:H for progressive")
    q.add_argument("--group", type=int, default=128)
    q.add_argument("--cycles", type=int, default=20)
    q.add_argument("--mode", choices=sorted(_MODES), default="asym")
    q.add_argument("--scale-width", type=int, choices=(2, 4), default=4)
    q.add_argument("--out", required=True)
    q.add_argument("--format", choices=("text", "csv"), default="text")
    q.set_defaults(func=_cmd_quantize)

    r = sub.add_parser("refine", help="refit one precision's scales on calibration data")
    r.add_argument("--model", required=True)
    r.add_argument("--weights", required=True, help="FMAT full-precision reference")
    r.add_argument("--calib", required=True, help="FMAT activation batch")
    r.add_argument("--bits", type=int, required=True)
    r.add_argument("--solver", choices=("exact", "gd"), default="exact")
    r.add_argument("--epochs", type=int, default=GD_EPOCHS)
    r.add_argument("--lr", type=float, default=GD_LEARNING_RATE)
    r.add_argument("--scale-width", type=int, choices=(2, 4), default=4)
    r.add_argument("--out", help="defaults to rewriting --model")
    r.set_defaults(func=_cmd_refine)

    g = sub.add_parser("gemv", help="run the engine at a chosen precision")
    g.add_argument("--model", required=True)
    g.add_argument("--bits", type=int, required=True)
    g.add_argument("--x", required=True, help="FMAT input (one vector per row)")
    g.add_argument("--out", required=True)
    g.add_argument("--path", choices=("lut", "naive"), default="lut")
    g.set_defaults(func=_cmd_gemv)

    b = sub.add_parser("bench", help="time the engine paths")
    b.add_argument("--model")
    b.add_argument("--shapes", help="synthetic suite, e.g. "
                   + ",".join(f"{r}x{c}" for r, c in BENCH_SUITE))
    b.add_argument("--bits", default="all")
    b.add_argument("--repeats", type=int, default=32)
    b.add_argument("--group", type=int, default=128)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dense", action="store_true",
                   help="also time a dense float32 GEMV in the naive style")
    b.add_argument("--format", choices=("text", "csv"), default="text")
    b.set_defaults(func=_cmd_bench)

    i = sub.add_parser("inspect", help="memory footprint accounting")
    i.add_argument("--model", required=True)
    i.add_argument("--scale-width", type=int, choices=(2, 4), default=2)
    i.add_argument("--format", choices=("text", "csv", "kv"), default="text")
    i.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already reported to stderr
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NonFiniteError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except AnyBcqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
