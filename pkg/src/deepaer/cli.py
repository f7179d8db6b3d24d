"""Command-line entry point: ``deepaer <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (PROBLEMS, REGION_NAMES, DataError, generate_synthetic, load_dataset,
                   load_region_map, save_dataset, select_region, channel_windows)
from .evaluation import (channel_correlation_matrix, emit_report, format_percent, run_cv,
                         write_channel_csv, write_matrix_csv)
from .gradcheck import run_suite
from .model import VARIANTS, WeightFileError, build_model, save_weights, variant_spec
from .trainer import TrainConfig, train_channel_model, write_loss_curve

log = logging.getLogger("deepaer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
OUT_ENV = "DEEPAER_OUT"

DEFAULTS = dict(
    dataset=None, problem="valence", region="FRONT", variant="M2", tw=5, batch=64, epochs=50,
    alpha=1e-4, seed=0, out=None, threads=1, region_map=None, folds=10, precision="float32",
    # synth
    trials=200, channels=12, samples=8064, separability=1.0, name="synthetic",
    # gradcheck
    tolerance=1e-4,
    # correlate
    source="votes", from_dir=None,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, data=True, training=True):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file of option values (flags take precedence)")
    p.add_argument("--out", default=S, help=f"output directory (default ${OUT_ENV} or ./runs/<command>)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("-v", "--verbose", action="count", default=0)
    if data:
        p.add_argument("--dataset", default=S, help="container manifest (.json)")
        p.add_argument("--problem", choices=PROBLEMS, default=S)
        p.add_argument("--region", type=str.upper, choices=REGION_NAMES, default=S)
        p.add_argument("--region-map", dest="region_map", default=S, help="JSON region -> channel list override")
        p.add_argument("--tw", type=int, choices=(5, 10, 15), default=S, help="window length in seconds")
    if training:
        p.add_argument("--variant", choices=sorted(VARIANTS), default=S)
        p.add_argument("--batch", type=int, default=S)
        p.add_argument("--epochs", type=int, default=S)
        p.add_argument("--alpha", type=float, default=S, help="Adam learning rate")
        p.add_argument("--folds", type=int, default=S)
        p.add_argument("--threads", type=int, default=S)
        p.add_argument("--precision", choices=("float32", "float64"), default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepaer", description="Per-channel 1D CNN ensembles for EEG emotion recognition.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="audit a dataset container")
    _add_common(p, training=False)

    p = sub.add_parser("synth", help="generate a synthetic dataset container")
    _add_common(p, data=False, training=False)
    S = argparse.SUPPRESS
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--channels", type=int, default=S)
    p.add_argument("--samples", type=int, default=S)
    p.add_argument("--separability", type=float, default=S)
    p.add_argument("--name", default=S, help="container file stem")

    p = sub.add_parser("train", help="train one model per region channel on every trial")
    _add_common(p)

    p = sub.add_parser("cv", help="k-fold cross-validation of the two-level ensemble")
    _add_common(p)

    p = sub.add_parser("regions", help="cross-validate every brain region and compare")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(p, data=False, training=False)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=S)
    p.add_argument("--tolerance", type=float, default=S)

    p = sub.add_parser("correlate", help="channel correlation matrix for a region")
    _add_common(p)
    p.add_argument("--source", choices=("votes", "raw"), default=S,
                   help="votes: window-vote fractions from cross-validation; raw: signal samples")
    p.add_argument("--from", dest="from_dir", default=S, help="reuse vote_fractions.csv from a cv output directory")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < --config file < explicit flags."""
    cfg = dict(DEFAULTS)
    given = vars(args)
    if "config" in given:
        try:
            file_cfg = json.loads(Path(given["config"]).read_text())
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {given['config']}: {e}") from None
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in given.items() if k in DEFAULTS})
    cfg["command"] = args.command
    if cfg["out"] is None:
        base = os.environ.get(OUT_ENV)
        cfg["out"] = str(Path(base) / args.command) if base else str(Path("runs") / args.command)
    if cfg["region"]:
        cfg["region"] = cfg["region"].upper()
    if cfg["batch"] < 2 or cfg["epochs"] < 1 or cfg["threads"] < 1 or cfg["folds"] < 2:
        raise UsageError("need --batch >= 2, --epochs >= 1, --threads >= 1, --folds >= 2")
    return cfg


def write_manifest(out: Path, cfg: dict, argv: list[str]) -> None:
    import scipy

    manifest = dict(
        command=cfg["command"], argv=argv, config=cfg,
        versions=dict(deepaer=__version__, python=platform.python_version(),
                      numpy=np.__version__, scipy=scipy.__version__),
    )
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(batch_size=cfg["batch"], epochs=cfg["epochs"], seed=cfg["seed"],
                       alpha=cfg["alpha"], precision=cfg["precision"], track_accuracy=False)


def _need_dataset(cfg):
    if not cfg["dataset"]:
        raise UsageError("--dataset is required for this command")
    return load_dataset(cfg["dataset"])


def _region_map(cfg):
    return load_region_map(cfg["region_map"]) if cfg["region_map"] else None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_validate(cfg, out):
    ds = _need_dataset(cfg)
    print(f"{cfg['dataset']}: {ds.n_trials} trials x {ds.n_channels} channels x {ds.n_samples} samples "
          f"@ {ds.sample_rate:g} Hz{' (synthetic)' if ds.synthetic else ''}")
    for problem in PROBLEMS:
        y = ds.labels(problem)
        print(f"  {problem}: {int((y == 0).sum())} low / {int((y == 1).sum())} high")
    rmap = _region_map(cfg)
    for region in REGION_NAMES:
        try:
            idx = select_region(ds, region, rmap)
            print(f"  region {region}: {len(idx)} channels")
        except DataError as e:
            print(f"  region {region}: unavailable ({e})")
    return EXIT_OK


def cmd_synth(cfg, out):
    ds = generate_synthetic(cfg["trials"], cfg["channels"], cfg["samples"], cfg["separability"], cfg["seed"])
    path = save_dataset(ds, out / f"{cfg['name']}.json")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_train(cfg, out):
    ds = _need_dataset(cfg)
    chans = select_region(ds, cfg["region"], _region_map(cfg))
    y = ds.labels(cfg["problem"])
    tc = _train_config(cfg)
    dtype = np.float32 if tc.precision == "float32" else np.float64
    for c in chans:
        wins = channel_windows(ds, c, cfg["tw"])
        n, k, w = wins.shape
        seed = [cfg["seed"], 0, c]
        model = build_model(variant_spec(cfg["variant"], w),
                            np.random.default_rng(np.random.SeedSequence(seed + [0x1A1])),
                            cfg["variant"], c, dtype)
        model, hist = train_channel_model(model, wins.reshape(-1, w), np.repeat(y, k), tc, seed=seed)
        name = ds.channel_names[c]
        save_weights(model, out / f"model_{c:02d}_{name}.lp1d")
        write_loss_curve(hist, out / f"loss_{c:02d}_{name}.csv")
        print(f"channel {c:2d} {name:<4} final loss {hist[-1].mean_loss:.4f} train acc {format_percent(hist[-1].train_acc)}")
    return EXIT_OK


def _cv(cfg, ds, region, out):
    report = run_cv(ds, cfg["problem"], region, cfg["variant"], cfg["tw"], _train_config(cfg),
                    k=cfg["folds"], seed=cfg["seed"], region_map=_region_map(cfg), threads=cfg["threads"])
    stem = f"cv_{cfg['problem']}_{region}_{cfg['variant']}"
    paths = emit_report(report, out, stem)
    write_channel_csv(report, out / f"{stem}_channels.csv")
    with open(out / f"{stem}_vote_fractions.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["trial", "label", "test_fold"] + report.channel_names)
        for t in range(ds.n_trials):
            w.writerow([t, int(report.labels[t]), int(report.test_fold[t]) + 1]
                       + [repr(float(v)) for v in report.vote_fraction[t]])
    return report, paths


def cmd_cv(cfg, out):
    ds = _need_dataset(cfg)
    report, paths = _cv(cfg, ds, cfg["region"], out)
    print(paths["txt"].read_text(), end="")
    return EXIT_OK


def cmd_regions(cfg, out):
    ds = _need_dataset(cfg)
    rmap = _region_map(cfg)
    rows = []
    for region in REGION_NAMES:
        try:
            select_region(ds, region, rmap)
        except DataError as e:
            log.warning("skipping region %s: %s", region, e)
            continue
        report, _ = _cv(cfg, ds, region, out)
        s = report.summary()
        rows.append([region, len(report.channels), s["acc"][0], s["acc"][1]] + [s[m][0] for m in ("sens", "spec", "prec", "fm", "gm")])
    if not rows:
        raise DataError("no region could be resolved against the dataset channels")
    with open(out / f"regions_{cfg['problem']}_{cfg['variant']}.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["region", "n_channels", "acc_mean", "acc_std", "sens", "spec", "prec", "fm", "gm"])
        for r in rows:
            w.writerow(r[:2] + [("NA" if v is None else repr(v * 100 if i < 2 else v)) for i, v in enumerate(r[2:])])
    print(f"{'region':<7}{'ch':>4}{'acc%':>9}{'std':>7}")
    for r in rows:
        print(f"{r[0]:<7}{r[1]:>4}{r[2] * 100:>9.2f}{r[3] * 100:>7.2f}")
    return EXIT_OK


def cmd_gradcheck(cfg, out):
    reports = run_suite(cfg["seed"], cfg["tolerance"], cfg["variant"])
    ok = True
    lines = []
    for layer, rep in reports.items():
        status = "ok" if rep.passed else "FAIL"
        ok &= rep.passed
        lines.append(f"{layer:<18} max rel err {rep.max_error:.3e}  {status}")
        lines += ["    " + ln for ln in rep.lines()]
    text = "\n".join(lines) + "\n"
    (out / "gradcheck.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if ok else EXIT_CHECK


def raw_channel_correlation(ds, channels) -> np.ndarray:
    """Pearson r between raw channel signals pooled over all trials (streamed, float64)."""
    c = len(channels)
    s = np.zeros(c)
    ss = np.zeros((c, c))
    n = 0
    for trial in ds.trials:
        x = trial[channels].astype(np.float64)
        s += x.sum(axis=1)
        ss += x @ x.T
        n += x.shape[1]
    cov = ss / n - np.outer(s, s) / n ** 2
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.outer(sd, sd)
    r[~np.isfinite(r)] = np.nan
    return np.clip(r, -1, 1)


def cmd_correlate(cfg, out):
    if cfg["source"] == "votes" and cfg["from_dir"]:
        path = Path(cfg["from_dir"]) / f"cv_{cfg['problem']}_{cfg['region']}_{cfg['variant']}_vote_fractions.csv"
        try:
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
        except OSError as e:
            raise DataError(f"cannot read {path}: {e}") from None
        names = rows[0][3:]
        values = np.array([[float(v) for v in r[3:]] for r in rows[1:]])
    else:
        ds = _need_dataset(cfg)
        chans = select_region(ds, cfg["region"], _region_map(cfg))
        names = [ds.channel_names[c] for c in chans]
        if cfg["source"] == "raw":
            matrix = raw_channel_correlation(ds, chans)
            values = None
        else:
            report, _ = _cv(cfg, ds, cfg["region"], out)
            values = report.vote_fraction
    if values is not None:
        matrix = channel_correlation_matrix(values)
    path = out / f"correlation_{cfg['source']}_{cfg['problem']}_{cfg['region']}.csv"
    write_matrix_csv(matrix, names, path)
    print(path.read_text(), end="")
    return EXIT_OK


COMMANDS = dict(validate=cmd_validate, synth=cmd_synth, train=cmd_train, cv=cmd_cv, regions=cmd_regions,
                gradcheck=cmd_gradcheck, correlate=cmd_correlate)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, argv)
        return COMMANDS[args.command](cfg, out)
    except UsageError as e:
        print(f"deepaer: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WeightFileError, FileNotFoundError) as e:
        print(f"deepaer: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"deepaer: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
