"""Command-line interface: ``flowvi <command> ...`` (or ``python -m flowvi``)."""
from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .config import load_config
from .metrics import compare
from .rng import RngState
from .targets import get_target


def _print_table(records, out=None):
    sys.stdout.write(bench.results_text(records))
    if out:
        bench.emit_results(records, out)


def cmd_run(args):
    config = load_config(args.config, args.set)
    record = bench.run_experiment(config, args.output, keep_samples=args.keep_samples,
                                  log_every=args.log_every)
    _print_table([record], args.out)
    return 0


def cmd_sweep(args):
    base = load_config(args.base, args.set)
    axis = bench.Axis(args.axis)
    grid = bench.parse_grid(axis, args.grid)
    records = bench.run_sweep(axis, base, grid, replicates=args.replicates, root=args.output)
    ok = [r for r in records if r.error is None]
    if ok:
        _print_table(ok, args.out)
    for r in records:
        if r.error is not None:
            print(f"# failed: {r.config.target_name} {r.config_hash}: {r.error}", file=sys.stderr)
    return 0 if len(ok) == len(records) else 1


def _row(target, dim, metric="", baseline=""):
    cells = dict.fromkeys(bench.RESULT_COLUMNS, "")
    cells.update(target=target, dim=str(dim), metric=metric, baseline=baseline)
    return ",".join(cells[c] for c in bench.RESULT_COLUMNS)


def cmd_baseline(args):
    value = bench.run_baseline(args.target, args.samples, args.seed)
    print(",".join(bench.RESULT_COLUMNS))
    print(_row(args.target, get_target(args.target).dim, baseline=bench.fmt(value)))
    return 0


def cmd_compare(args):
    A, side_a = bench.read_samples(args.a)
    B, side_b = bench.read_samples(args.b)
    if A.shape[1] != B.shape[1]:
        print(f"column counts differ: {A.shape[1]} vs {B.shape[1]}", file=sys.stderr)
        return 2
    report = compare(A, B, RngState(args.seed))
    target = side_a.get("target") or side_b.get("target") or ""
    print(",".join(bench.RESULT_COLUMNS))
    print(_row(target, A.shape[1], metric=bench.fmt(report.value)))
    return 0


def cmd_emit_reference(args):
    target = get_target(args.target)
    X = target.exact_sample(RngState(args.seed), args.samples)
    bench.write_samples(args.out, X, args.seed, target=args.target)
    print(f"wrote {X.shape[0]}x{X.shape[1]} samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowvi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser.add_argument("--output", default=None,
                        help=f"output root (default ${bench.OUTPUT_ENV} or ./results)")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", default=None, help="also write the results table here")

    p = sub.add_parser("run", help="train and evaluate one config")
    p.add_argument("config")
    p.add_argument("--keep-samples", action="store_true", help="store final evaluation samples")
    p.add_argument("--log-every", type=int, default=0, metavar="N")
    overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a base config over one axis")
    p.add_argument("base")
    p.add_argument("--axis", required=True, choices=[a.value for a in bench.Axis])
    p.add_argument("--grid", required=True,
                   help="comma-separated values, e.g. 1,2,6 or stl:8,stl:512")
    p.add_argument("--replicates", type=int, default=1)
    overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="metric between two independent exact sample sets")
    p.add_argument("target")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("compare-samples", help="score two sample files against each other")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--seed", type=int, default=0, help="subsampling seed for unequal sizes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("emit-reference", help="write exact target samples to a file")
    p.add_argument("target")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_reference)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"flowvi: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
