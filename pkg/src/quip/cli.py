"""Command line front end.

Exit codes: 0 success, 1 a verification check failed, 2 bad input (flags,
files, formats, data), 3 numerical failure.
"""

import argparse
import sys

import numpy as np

from . import _rng
from ._errors import DataError, FormatError, IoError, NumericalError
from ._types import format_human, format_kv
from .analysis import hessian_stats
from .incoherence import DEFAULT_ALPHA, DEFAULT_RHO, METHODS, dequantize, quip
from .linalg import generate_lowrank_psd
from .matio import read_matrix, read_quantized, write_matrix, write_quantized
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _rho(text):
    if text.lower() in ("max", "none"):
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'max', got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("rho must be > 0")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected an integer >= 1")
    return value


def _emit(items, fmt, path=None):
    text = format_kv(items) if fmt == "kv" else format_human(items)
    print(text)
    if path:
        try:
            with open(path, "w") as fh:
                fh.write(format_kv(items) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc


def cmd_quantize(args):
    w = read_matrix(args.weights)
    h = read_matrix(args.hessian)
    res = quip(w, h, bits=args.bits, method=args.method, incoherence=args.incoherence == "on",
               rho=args.rho, alpha=args.alpha, seed=args.seed, passes=args.passes,
               subroutine=args.subroutine, threads=args.threads)
    write_quantized(res.layer, args.out)
    _emit(res.report.items(), args.format, args.report)
    return EXIT_OK


def cmd_dequantize(args):
    layer = read_quantized(args.input)
    write_matrix(dequantize(layer), args.out)
    return EXIT_OK


def cmd_verify(args):
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        for result in run_suite(name, args.threads):
            ok &= result.passed
            if args.format == "kv":
                print(f"check={result.name} status={'PASS' if result.passed else 'FAIL'} "
                      f"detail={result.detail!r}")
            else:
                print(result.line())
            sys.stdout.flush()
    return EXIT_OK if ok else EXIT_FAILED


def cmd_stats(args):
    stats = hessian_stats(read_matrix(args.hessian))
    _emit(stats.items(), args.format, args.report)
    return EXIT_OK


def cmd_gen(args):
    if args.rank > args.n:
        raise DataError(f"rank {args.rank} exceeds n={args.n}")
    spectrum = args.decay ** np.arange(args.rank)
    write_matrix(generate_lowrank_psd(args.n, args.rank, spectrum, args.seed), args.hessian)
    if args.weights:
        w = _rng.generator(args.seed, 1 << 50).standard_normal((args.m, args.n))
        write_matrix(w, args.weights)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="quip", description="Weight quantization with incoherence processing.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("human", "kv"), default="human")
        p.add_argument("--threads", type=_positive, default=1)

    q = sub.add_parser("quantize", help="quantize a weight matrix against a Hessian")
    q.add_argument("--weights", required=True)
    q.add_argument("--hessian", required=True)
    q.add_argument("--bits", type=int, default=4)
    q.add_argument("--method", choices=METHODS, default="ldlq")
    q.add_argument("--subroutine", choices=("nearest", "stochastic"), default="nearest")
    q.add_argument("--incoherence", choices=("on", "off"), default="on")
    q.add_argument("--rho", type=_rho, default=DEFAULT_RHO, help="range multiplier, or 'max' for no clamping")
    q.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    q.add_argument("--seed", type=_seed, default=0)
    q.add_argument("--passes", type=_positive, default=10)
    q.add_argument("--out", required=True)
    q.add_argument("--report", help="also write the report as key=value lines to this file")
    common(q)
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="reconstruct real weights from a QZ file")
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    common(d)
    d.set_defaults(func=cmd_dequantize)

    v = sub.add_parser("verify", help="run acceptance checks on synthetic instances")
    v.add_argument("--suite", choices=("all", *SUITES), default="all")
    common(v)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("stats", help="summary statistics of a Hessian")
    s.add_argument("--hessian", required=True)
    s.add_argument("--report")
    common(s)
    s.set_defaults(func=cmd_stats)

    g = sub.add_parser("gen", help="write a synthetic low-rank Hessian and optional weights")
    g.add_argument("--n", type=_positive, required=True)
    g.add_argument("--rank", type=_positive, required=True)
    g.add_argument("--m", type=_positive, default=64)
    g.add_argument("--decay", type=float, default=0.5, help="eigenvalue i is decay**i")
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--hessian", required=True)
    g.add_argument("--weights")
    common(g)
    g.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, FormatError, IoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        extra = " ".join(f"{k}={v}" for k, v in exc.details.items())
        print(f"numerical error: {exc} {extra}".rstrip(), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
