"""Command line entry point: ``webgrid {run,anova,plot,validate,config}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .reference import REFERENCE_TABLES
from .stats import UnbalancedDesign, f_pvalue, format_p, recompute_f, table_from_sums, format_table

F_TOLERANCE = 0.01


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="webgrid", description="Web-grid load balancing experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the factorial design described by a config file")
    run.add_argument("--config", type=Path, help="experiment config (defaults used when omitted)")
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--seed", type=int, help="override the base seed")
    run.add_argument("--jobs", type=int, default=1, help="cells simulated in parallel")
    run.add_argument("--job-kind", choices=["simple", "complex"], help="override the job kind")
    run.add_argument("--no-plots", action="store_true")

    anova = sub.add_parser("anova", help="recompute ANOVA tables from an observation log")
    anova.add_argument("--log", type=Path, required=True)
    anova.add_argument("--out", type=Path, help="directory for table files (default: next to the log)")

    plot = sub.add_parser("plot", help="write plot data and SVG figures from an observation log")
    plot.add_argument("--log", type=Path, required=True)
    plot.add_argument("--out", type=Path, help="directory for plot files (default: next to the log)")

    validate = sub.add_parser("validate", help="replay the reference ANOVA tables and check F values")
    validate.add_argument("--show", action="store_true", help="print the rebuilt tables")

    sub.add_parser("config", help="print the default experiment config")
    return parser


def _cmd_run(args) -> int:
    design = harness.load_config(args.config) if args.config else harness.ExperimentDesign()
    if args.seed is not None:
        design = replace(design, base_seed=args.seed)
    if args.job_kind:
        design = replace(design, job_kind=harness.JobKind(args.job_kind))
    records = harness.run_experiment(design, args.out, jobs=args.jobs, progress=args.verbose)
    failed = [r for r in records if not r.ok]
    print(f"{len(records)} cells logged to {args.out / harness.LOG_NAME} ({len(failed)} failed)")
    if failed:
        for r in failed[:10]:
            print(f"  failed {r.key}: {r.reason}", file=sys.stderr)
        return 1
    for path in harness.emit_tables(records, args.out):
        print(f"wrote {path}")
    if not args.no_plots:
        for path in harness.emit_plots(records, args.out):
            print(f"wrote {path}")
    return 0


def _cmd_anova(args) -> int:
    records = harness.read_log(args.log)
    out = args.out or args.log.parent
    for path in harness.emit_tables(records, out):
        print(f"wrote {path}")
    for table in harness.anova_tables(records).values():
        print(format_table(table))
    return 0


def _cmd_plot(args) -> int:
    records = harness.read_log(args.log)
    for path in harness.emit_plots(records, args.out or args.log.parent):
        print(f"wrote {path}")
    return 0


def _cmd_validate(args) -> int:
    failures = 0
    for key, ref in REFERENCE_TABLES.items():
        f_values = recompute_f(ref.ss_df(), ref.residual_ss_df())
        for name, printed in ref.printed_f().items():
            got = f_values[name]
            ok = abs(got - printed) <= F_TOLERANCE
            failures += not ok
            p = f_pvalue(got, ref.rows[name][0], ref.residual[0])
            note = "" if format_p(p) == ref.rows[name][4] else f"  (printed Pr {ref.rows[name][4]})"
            print(f"{'PASS' if ok else 'FAIL'} {key} {name:9s} F={got:10.2f} printed={printed:10.2f} Pr={format_p(p)}{note}")
        if args.show:
            caption = f"{key}: {ref.response}, {ref.job_kind} jobs"
            print(format_table(table_from_sums(ref.ss_df(), ref.residual_ss_df(), ref.response), caption))
    print("validate: ok" if not failures else f"validate: {failures} F value(s) off by more than {F_TOLERANCE}")
    return 0 if not failures else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run" and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "anova":
            return _cmd_anova(args)
        if args.command == "plot":
            return _cmd_plot(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "config":
            sys.stdout.write(harness.DEFAULT_CONFIG)
            return 0
    except (OSError, ValueError, UnbalancedDesign) as exc:
        print(f"webgrid {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
