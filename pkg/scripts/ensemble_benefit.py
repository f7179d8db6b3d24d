"""Single-window vs first-level vs second-level accuracy over several seeds.

Each seed draws a fresh synthetic dataset and runs a full cross-validation;
the three accuracies come from the same trained models.

    python scripts/ensemble_benefit.py --seeds 10
"""
import argparse
import csv
import time
from pathlib import Path

import numpy as np

from deepaer.data import generate_synthetic
from deepaer.evaluation import run_cv
from deepaer.trainer import TrainConfig


def levels(seed, separability, trials, channels, epochs, batch, folds):
    ds = generate_synthetic(trials, channels, separability=separability, seed=seed)
    cfg = TrainConfig(batch_size=batch, epochs=epochs, seed=seed, track_accuracy=False)
    rep = run_cv(ds, "valence", "ALL", "M2", 5, cfg, k=folds, seed=seed)
    return rep.mean_window_accuracy, rep.mean_channel_accuracy, rep.mean_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--separability", type=float, default=0.5)
    ap.add_argument("--trials", type=int, default=60)
    ap.add_argument("--channels", type=int, default=6)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--out", default="runs/ensemble_benefit.csv")
    args = ap.parse_args()

    rows = []
    print(f"{'seed':>4} {'window':>8} {'first':>8} {'second':>8} {'sec':>6}")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        w, f, s = levels(seed, args.separability, args.trials, args.channels, args.epochs, args.batch, args.folds)
        rows.append((seed, w, f, s))
        print(f"{seed:>4} {w:8.4f} {f:8.4f} {s:8.4f} {time.perf_counter() - t0:6.1f}")
    means = np.array([r[1:] for r in rows]).mean(axis=0)
    print(f"mean {means[0]:8.4f} {means[1]:8.4f} {means[2]:8.4f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["seed", "window_acc", "first_level_acc", "second_level_acc"])
        wr.writerows([[r[0]] + [repr(float(v)) for v in r[1:]] for r in rows])


if __name__ == "__main__":
    main()
