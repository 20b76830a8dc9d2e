"""Median sup-norm CDF error of each estimator on E2 as the sample grows.

Run with ``python3 demos/convergence.py``; pass ``--csv out.csv`` to keep the rows.
"""
import argparse

import numpy as np

from opra import SweepConfig, fixture, run_sweep

parser = argparse.ArgumentParser()
parser.add_argument("--csv")
parser.add_argument("--reps", type=int, default=50)
args = parser.parse_args()

env, target, behavior = fixture("e2")
ns = [250, 500, 1000, 2000, 4000]
estimators = ["is-clip", "wis", "dm", "m-dr", "dm@tabular-permuted"]
sweep = SweepConfig(ns, args.reps, seed=3, estimators=estimators, risks=[], record_runtime=False)
result = run_sweep(env, target, behavior, sweep)
if args.csv:
    result.to_csv(args.csv)

print("n".rjust(6) + "".join(e.rjust(22) for e in estimators))
for n in ns:
    meds = [np.median(result.select(n=n, estimator=e).column("sup_err")) for e in estimators]
    print(str(n).rjust(6) + "".join(f"{m:22.4f}" for m in meds))
