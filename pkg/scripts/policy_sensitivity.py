#!/usr/bin/env python3
"""Sweep one policy parameter and report misses and mean t for each SSI policy."""
import argparse
from dataclasses import replace

import numpy as np

from webgrid.harness import ExperimentDesign, run_experiment
from webgrid.policies import SSI_POLICIES, PolicyParams
from webgrid.simcore import JobKind
from webgrid.workload import RateSchedule

PARAMS = ("tick_interval", "imbalance_threshold", "gossip_fanout", "migration_cost")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("param", choices=PARAMS)
    parser.add_argument("values", type=float, nargs="+")
    parser.add_argument("--rates", type=float, nargs="+", default=[50, 150, 300])
    parser.add_argument("--job-kind", choices=[k.value for k in JobKind], default="simple")
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    print(f"{args.param:>20}" + "".join(f"{p.value + ' m':>14}{p.value + ' t':>14}" for p in SSI_POLICIES))
    for value in args.values:
        cast = int(value) if args.param == "gossip_fanout" else value
        design = ExperimentDesign(
            schedule=RateSchedule(args.rates),
            replicates=args.seeds,
            job_kind=JobKind(args.job_kind),
            policy_params=replace(PolicyParams(), **{args.param: cast}),
            grid_sizes=(2, 4, 6) if args.param != "gossip_fanout" else (4, 6),
        )
        records = run_experiment(design)
        cols = []
        for p in SSI_POLICIES:
            rows = [r for r in records if r.policy == p.value]
            cols.append(f"{sum(r.m for r in rows):>14}{np.mean([r.t for r in rows]):>14.4f}")
        print(f"{cast:>20}" + "".join(cols))


if __name__ == "__main__":
    main()
