#!/usr/bin/env python3
"""Coherence floor vs. dimension count.

For a fixed class count, prints the closed-form lower bound next to the
coherence actually reached by gradient descent on the squared-cosine
objective, one row per dimension setting.
"""

import argparse

from aqhash.analysis import minimize_coherence, welch_lower_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classes", type=int, default=200)
    ap.add_argument("--dims", type=int, nargs="+", default=[12, 24, 32, 48, 96])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"C = {args.classes}")
    print(f"{'n':>5} {'bound':>10} {'reached mu':>12} {'objective':>12}")
    for n in args.dims:
        result = minimize_coherence(args.classes, n, steps=args.steps, seed=args.seed)
        bound = welch_lower_bound(args.classes, n)
        print(f"{n:>5} {bound:>10.5f} {result.final_mu:>12.5f} {result.final_value:>12.3f}")


if __name__ == "__main__":
    main()
