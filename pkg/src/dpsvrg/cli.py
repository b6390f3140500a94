"""Command line entry point: ``dpsvrg run|verify|synth|reference``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .algorithms import ConfigError
from .data import DataFormatError, synth_dataset, write_csv, write_libsvm
from .harness import load_experiment, run_experiment
from .topology import ScheduleError
from .verify import LEVELS, verify_suite

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpsvrg", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an experiment spec and write CSV/JSON artifacts")
    r.add_argument("spec", type=Path)
    r.add_argument("--out", type=Path, default=None, help="output directory (overrides the spec)")
    r.add_argument("--workers", type=int, default=None)

    v = sub.add_parser("verify", help="run the invariant battery")
    v.add_argument("--level", choices=LEVELS, default="fast")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--json", type=Path, default=None, help="also write the report here")

    s = sub.add_parser("synth", help="write a synthetic logistic dataset")
    s.add_argument("--n", type=int, default=512)
    s.add_argument("--d", type=int, default=20)
    s.add_argument("--sparsity", type=int, default=5)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", action="store_true", help="divide features by the largest row norm")
    s.add_argument("--format", choices=("csv", "libsvm"), default=None)
    s.add_argument("-o", "--output", type=Path, required=True)

    f = sub.add_parser("reference", help="solve each lambda of a spec to high accuracy")
    f.add_argument("spec", type=Path)
    f.add_argument("--out", type=Path, default=None)
    return p


def _cmd_run(args, reference_only: bool = False) -> int:
    spec = load_experiment(args.spec)
    path = run_experiment(spec, args.out, workers=getattr(args, "workers", None), reference_only=reference_only)
    summary = json.loads(path.read_text())
    for pt in summary["points"]:
        line = f"lam={pt['lam']:g} b={pt['b']} f_star={pt['f_star']:.12g} nnz={pt['x_star_nnz']}"
        for algo, r in pt.get("runs", {}).items():
            line += f" {algo}_gap={r['final_gap']:.3e}"
        print(line)
    print(f"summary: {path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    report = verify_suite(args.level, seed=args.seed)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} ({c.trials} trials, {c.seconds:.2f}s): {c.detail}")
    if args.json is not None:
        args.json.write_text(report.to_json() + "\n")
    print("all checks passed" if report.passed else f"{len(report.failures())} check(s) failed")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _cmd_synth(args) -> int:
    data, w = synth_dataset(args.n, args.d, args.sparsity, args.noise, args.seed, scale=args.scale)
    fmt = args.format or ("csv" if args.output.suffix.lower() == ".csv" else "libsvm")
    (write_csv if fmt == "csv" else write_libsvm)(data, args.output)
    print(f"wrote {data.n} samples x {data.d} features ({fmt}) to {args.output}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "run":
            return _cmd_run(args)
        if args.cmd == "reference":
            return _cmd_run(args, reference_only=True)
        if args.cmd == "verify":
            return _cmd_verify(args)
        return _cmd_synth(args)
    except (ConfigError, DataFormatError, ScheduleError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
