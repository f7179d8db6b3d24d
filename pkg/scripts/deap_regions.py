"""Region comparison on a DEAP container, side by side with the published accuracies.

Needs a container built from the DEAP preprocessed data (1280 trials, 32
channels, 8064 samples; see README for the format). Training at full scale
is slow: 32 channels x 10 folds x the requested epochs, per problem.

    python scripts/deap_regions.py --dataset deap.json --epochs 50 --threads 8
"""
import argparse
from pathlib import Path

from deepaer.data import REGION_NAMES, load_dataset
from deepaer.evaluation import emit_report, run_cv
from deepaer.trainer import TrainConfig

# mean 10-fold accuracy (%) reported for M2 with 5 s windows
PUBLISHED = {
    "valence": dict(FRONT=98.43, CENT=92.3, PERI=94.6, OCCIP=91.4, ALL=91.7),
    "arousal": dict(FRONT=97.65, CENT=93.8, PERI=93.2, OCCIP=92.7, ALL=90.3),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--problems", nargs="+", default=["valence", "arousal"])
    ap.add_argument("--regions", nargs="+", default=list(REGION_NAMES))
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/deap_regions")
    args = ap.parse_args()

    ds = load_dataset(args.dataset)
    cfg = TrainConfig(batch_size=args.batch, epochs=args.epochs, seed=args.seed, track_accuracy=False)
    out = Path(args.out)
    print(f"{'problem':<8} {'region':<6} {'ours':>7} {'std':>6} {'published':>10}")
    for problem in args.problems:
        for region in args.regions:
            rep = run_cv(ds, problem, region, "M2", 5, cfg, seed=args.seed, threads=args.threads)
            emit_report(rep, out)
            mean, std = rep.summary()["acc"]
            print(f"{problem:<8} {region:<6} {mean * 100:7.2f} {std * 100:6.2f} {PUBLISHED[problem][region]:10.2f}")


if __name__ == "__main__":
    main()
