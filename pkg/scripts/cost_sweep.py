#!/usr/bin/env python3
"""Sweep width multiplier x input resolution and print the cost grid as CSV.

Usage: python3 scripts/cost_sweep.py [--alphas 0.35,0.5,0.75,1.0,1.4]
       [--resolutions 96,128,160,192,224]
"""

import argparse
import sys

from bottlenet.costs import model_cost
from bottlenet.model import ModelSpec


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", default="0.35,0.5,0.75,1.0,1.4")
    ap.add_argument("--resolutions", default="96,128,160,192,224")
    args = ap.parse_args()
    alphas = [float(a) for a in args.alphas.split(",")]
    resolutions = [int(r) for r in args.resolutions.split(",")]
    print("alpha,resolution,madds,params")
    for alpha in alphas:
        for res in resolutions:
            rep = model_cost(ModelSpec(resolution=res, width_multiplier=alpha))
            print(f"{alpha},{res},{rep.total_madds},{rep.total_params}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
