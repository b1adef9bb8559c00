#!/usr/bin/env python3
"""Monte Carlo convergence of the preserved-fraction estimate.

For each (n, m) pair, prints the estimate at growing trial counts next to
the exact binomial value, so the 1/sqrt(trials) error decay is visible.
"""

import argparse
import sys

from bottlenet.theory import relu_preserved_fraction, relu_preserved_fraction_mc


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", default="2:4,3:3,4:24",
                    help="comma-separated n:m pairs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-trials", type=int, default=100_000)
    args = ap.parse_args()
    pairs = [tuple(int(v) for v in p.split(":")) for p in args.pairs.split(",")]
    print("n,m,trials,mc,exact,abs_error")
    for n, m in pairs:
        exact = relu_preserved_fraction(n, m)
        trials = 100
        while trials <= args.max_trials:
            mc = relu_preserved_fraction_mc(n, m, trials, args.seed)
            print(f"{n},{m},{trials},{mc:.6f},{exact:.6f},{abs(mc - exact):.6f}")
            trials *= 10
    return 0


if __name__ == "__main__":
    sys.exit(main())
