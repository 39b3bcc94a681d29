#!/usr/bin/env python3
"""Auxiliary-branch ablation on the synthetic benchmark.

Trains one model per branch count and seed, evaluates retrieval mAP on
the held-out query split, and prints a per-N summary table.
"""

import argparse
import time

import numpy as np

from aqhash import retrieval as rt
from aqhash import synthgen
from aqhash import training as tr


def evaluate(model, data, query_idx, gallery_idx) -> float:
    gallery = rt.encode_database(model, data, gallery_idx)
    queries = rt.encode_database(model, data, query_idx)
    rankings = rt.rank_all(queries, gallery)
    return rt.mean_average_precision(rankings, data.labels[query_idx],
                                     data.labels[gallery_idx])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classes", type=int, default=50)
    ap.add_argument("--images-per-class", type=int, default=6)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--k", type=int, default=12)
    ap.add_argument("--branches", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--learning-rate", type=float, default=0.01)
    ap.add_argument("--gamma", type=float, default=0.1)
    ap.add_argument("--outer", type=int, default=12)
    ap.add_argument("--inner", type=int, default=3)
    ap.add_argument("--samples-per-epoch", type=int, default=0,
                    help="0 = full gallery")
    args = ap.parse_args()

    data = synthgen.build(synthgen.default_spec(classes=args.classes,
                                                images_per_class=args.images_per_class,
                                                noise=args.noise, seed=0))
    query_idx, gallery_idx = synthgen.split(data.labels, 0.5, seed=0)
    spe = args.samples_per_epoch or gallery_idx.size
    print(f"classes={args.classes} gallery={gallery_idx.size} query={query_idx.size} "
          f"k={args.k} schedule={args.outer}x{args.inner} lr={args.learning_rate} "
          f"gamma={args.gamma}")

    summary = {}
    for n in args.branches:
        scores = []
        for seed in args.seeds:
            cfg = tr.TrainConfig(k=args.k, d=64, heads=8, branches=n,
                                 beta=1.0, gamma=args.gamma,
                                 learning_rate=args.learning_rate,
                                 batch_size=16, samples_per_epoch=spe,
                                 outer_iterations=args.outer, inner_epochs=args.inner,
                                 seed=seed)
            t0 = time.time()
            model, _, _ = tr.train(data, gallery_idx, cfg)
            score = evaluate(model, data, query_idx, gallery_idx)
            scores.append(score)
            print(f"  N={n} seed={seed}: mAP={score:.4f} ({time.time() - t0:.0f}s)")
        summary[n] = (float(np.mean(scores)), float(np.std(scores)))

    print(f"\n{'N':>4} {'mean mAP':>10} {'std':>8}")
    for n, (mean, std) in summary.items():
        print(f"{n:>4} {mean:>10.4f} {std:>8.4f}")


if __name__ == "__main__":
    main()
