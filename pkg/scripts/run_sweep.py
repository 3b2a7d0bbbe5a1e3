#!/usr/bin/env python3
"""Run the default sweep for simple and complex jobs and write tables and plots.

Each job kind gets its own subdirectory under --out. Re-running resumes from
whatever the observation logs already hold.
"""
import argparse
import time
from dataclasses import replace
from pathlib import Path

from webgrid.harness import ExperimentDesign, emit_plots, emit_tables, load_config, run_experiment
from webgrid.simcore import JobKind


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--config", type=Path, help="experiment config; defaults to the built-in design")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, help="override base_seed")
    args = parser.parse_args()

    base = load_config(args.config) if args.config else ExperimentDesign()
    if args.seed is not None:
        base = replace(base, base_seed=args.seed)

    for kind in JobKind:
        design = replace(base, job_kind=kind)
        out = args.out / kind.value
        start = time.perf_counter()
        records = run_experiment(design, out, jobs=args.jobs, progress=True)
        emit_tables(records, out)
        emit_plots(records, out)
        print(f"{kind.value}: {len(records)} cells in {time.perf_counter() - start:.1f}s -> {out}")
        print((out / "anova_t_{}.txt".format(kind.value)).read_text())


if __name__ == "__main__":
    main()
