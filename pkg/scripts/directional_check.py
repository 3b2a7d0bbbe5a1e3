#!/usr/bin/env python3
"""Compare the three SSI-style policies under heavy complex-job load.

Prints total misses and mean response time per policy, overall and per grid
size, across a range of node speeds. Slower nodes push the cluster deeper into
saturation; faster ones leave headroom where placement quality matters more.
"""
import argparse
from dataclasses import replace

import numpy as np

from webgrid.harness import ExperimentDesign, run_experiment
from webgrid.policies import SSI_POLICIES
from webgrid.simcore import JobKind, SimConfig
from webgrid.workload import RateSchedule


def summarize(records, label):
    print(f"\n== {label}")
    print(f"{'policy':<10}{'misses':>10}{'mean t':>10}")
    for policy in SSI_POLICIES:
        rows = [r for r in records if r.policy == policy.value]
        print(f"{policy.value:<10}{sum(r.m for r in rows):>10}{np.mean([r.t for r in rows]):>10.3f}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rates", type=float, nargs="+", default=[300, 350, 400, 500, 1000])
    parser.add_argument("--speeds", type=float, nargs="+", default=[1000.0])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--base-seed", type=int, default=2012)
    parser.add_argument("--per-size", action="store_true", help="also break results down by grid size")
    args = parser.parse_args()

    for speed in args.speeds:
        design = ExperimentDesign(
            policies=SSI_POLICIES,
            schedule=RateSchedule(args.rates),
            grid_sizes=(2, 4, 6),
            replicates=args.seeds,
            base_seed=args.base_seed,
            job_kind=JobKind.COMPLEX,
            sim=replace(SimConfig(), node_speed=speed),
        )
        records = run_experiment(design, jobs=1)
        summarize(records, f"node_speed={speed:g}")
        if args.per_size:
            for n in design.grid_sizes:
                summarize([r for r in records if r.grid_size == n], f"node_speed={speed:g}, n={n}")


if __name__ == "__main__":
    main()
