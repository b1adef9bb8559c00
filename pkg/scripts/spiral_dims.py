#!/usr/bin/env python3
"""Spiral embed/rectify/invert reconstruction error vs embedding dimension.

Averages the per-dimension mean squared error over several seeds; the
drop of many orders of magnitude between n=2..3 and n>=15 is the point.
"""

import argparse
import sys

import numpy as np

from bottlenet.theory import spiral_experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", default="2,3,5,8,15,30")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--points", type=int, default=1000)
    args = ap.parse_args()
    dims = [int(d) for d in args.dims.split(",")]
    print("n,mean_mse,median_mse,min_mse,max_mse")
    per_dim = {n: [] for n in dims}
    for seed in range(args.seeds):
        errs = spiral_experiment(dims, seed=seed, points=args.points)
        for n in dims:
            per_dim[n].append(errs[n])
    for n in dims:
        e = np.array(per_dim[n])
        print(f"{n},{e.mean():.6e},{np.median(e):.6e},{e.min():.6e},{e.max():.6e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
