"""Command line entry point: simulate, run, report and tree subcommands."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import bench
from .data import DataError, encode_labels, filter_rare_labelsets, load_dataset, write_csv
from .labeltree import TreeError, build_tree, flat_tree
from .simulate import SimConfig, gen_dataset

log = logging.getLogger("treeconformal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not argparse's exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise bench.ConfigError(message)


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def cmd_simulate(args):
    cfg = SimConfig(n=args.n, c=args.c, beta=args.beta, w=args.w, seed=args.seed,
                    later_noise=not args.no_later_noise)
    ds = gen_dataset(cfg)
    if args.output == "-":
        write_csv(ds, sys.stdout)
    else:
        write_csv(ds, args.output)
        log.info("wrote %d rows to %s", ds.n, args.output)
    return EXIT_OK


def cmd_run(args):
    cfg = bench.load_config(args.config)
    overrides = {k: v for k, v in (("output_dir", args.output_dir), ("workers", args.workers),
                                   ("replications", args.replications)) if v is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    report = bench.run_experiment(cfg)
    print(f"{len(report.rows)} rows, {len(report.failures)} failed replications "
          f"-> {cfg.output_dir}")
    return EXIT_RUNTIME if report.failures and not report.rows else EXIT_OK


def _label_counts(args):
    counts = {}
    for path in args.inputs:
        side = os.path.join(os.path.dirname(os.path.abspath(path)), "labels.csv")
        if os.path.exists(side):
            counts.update(bench.read_labels_csv(side))
    for item in args.labels or ():
        name, _, c = item.partition("=")
        try:
            counts[name] = int(c)
        except ValueError:
            raise bench.ConfigError(f"--labels expects name=c, got {item!r}") from None
    return counts


def cmd_report(args):
    for path in args.inputs:
        if not os.path.exists(path):
            raise DataError(f"no such file: {path}")
    counts = _label_counts(args)
    report = bench.merge_reports(bench.read_report(p) for p in args.inputs)
    report.n_labels = counts
    os.makedirs(args.output_dir, exist_ok=True)
    summary_path = os.path.join(args.output_dir, "summary.csv")
    report.write_summary(summary_path)
    table = bench.lambda_diagnostics(report)
    bench.write_lambda_csv(table, os.path.join(args.output_dir, "lambda.csv"))
    if not table:
        print("no adaptive runs: lambda table is empty")
    if not args.no_figures:
        from .plotting import render_all

        for p in render_all(report.summary(), table, args.output_dir):
            log.info("figure %s", p)
    with open(summary_path) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_tree(args):
    ds = load_dataset(args.path, args.format, args.labels, args.labels_first)
    if args.min_count:
        ds = filter_rare_labelsets(ds, args.min_count)
    codes = range(1 << ds.c) if args.full else sorted(set(encode_labels(ds.labels).tolist()))
    if len(codes) < 2:
        tree = flat_tree(codes, ds.c)
    else:
        tree = build_tree(codes, ds.c)
    print(tree.outline() if args.style == "outline" else tree.adjacency(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="treeconformal", description="Tree-based multi-label conformal prediction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic dataset as CSV")
    s.add_argument("-n", type=int, default=10_000)
    s.add_argument("-c", type=int, default=5)
    s.add_argument("--beta", type=_floats, default=(2.0, 2.5, 2.0))
    s.add_argument("--w", type=float, default=1.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-later-noise", action="store_true",
                   help="drop the cubic noise term for labels after the first")
    s.add_argument("-o", "--output", default="-", help="CSV path, '-' for stdout")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run an experiment from a key = value config file")
    r.add_argument("config")
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.add_argument("--replications", type=int)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="aggregate result CSVs and draw figures")
    rp.add_argument("inputs", nargs="+", help="results.csv files written by 'run'")
    rp.add_argument("-o", "--output-dir", default="report")
    rp.add_argument("--labels", action="append", metavar="NAME=C",
                    help="label count of a dataset (read from labels.csv when present)")
    rp.add_argument("--no-figures", action="store_true")
    rp.set_defaults(func=cmd_report)

    t = sub.add_parser("tree", help="print the labelset tree of a dataset")
    t.add_argument("path")
    t.add_argument("--labels", type=int, required=True, help="number of label columns")
    t.add_argument("--format", choices=("csv", "arff"))
    t.add_argument("--labels-first", action="store_true")
    t.add_argument("--min-count", type=int, default=0)
    t.add_argument("--full", action="store_true", help="use all 2^c labelsets")
    t.add_argument("--style", choices=("outline", "adjacency"), default="outline")
    t.set_defaults(func=cmd_tree)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except bench.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TreeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
