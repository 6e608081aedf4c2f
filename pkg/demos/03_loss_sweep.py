#!/usr/bin/env python3
"""
Compare the three losses with the sweep harness, the way the CLI
`experiment` command does it.

Each cell trains from the same seed and split, so differences come from the
loss alone. Results land in <out>/results.csv with one plot per swept axis.
With the short default schedule expect noisy numbers; the point is the
harness, not the ranking.
"""
import argparse
import csv
import os

from tonguetrack import ExperimentConfig
from tonguetrack.experiment import run_experiment


def main(args):
    cfg = ExperimentConfig.from_dict({
        "seed": args.seed,
        "model": {"arch": "unet", "input_size": 64},
        "train": {"epochs": args.epochs, "batch_size": 4, "learning_rate": 1e-4},
        "data": {"synthetic": {"n_frames": args.n_frames, "seed": args.seed}, "split": [0.8, 0.1, 0.1]},
        "sweep": {"loss": ["dice", "weighted_ce", "compound"]},
    })
    rows = run_experiment(cfg, args.out, plot=True)

    print("%-12s %8s %8s %7s" % ("loss", "MSD px", "std", "failed"))
    for r in rows:
        print("%-12s %8.2f %8.2f %7s" % (r["loss"], r["mean_msd"], r["std_msd"], r.get("n_failed", "-")))
    with open(os.path.join(args.out, "results.csv")) as fh:
        print(len(list(csv.DictReader(fh))), "rows in", os.path.join(args.out, "results.csv"))


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--out", default="demo_out/loss_sweep")
    parser.add_argument("--n-frames", type=int, default=120)
    parser.add_argument("--epochs", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    main(parser.parse_args())
