"""Metrics, k-fold cross-validation of the two-level ensemble, and channel correlations."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .data import LOW, EegDataset, channel_windows, make_folds, select_region, window_layout
from .ensemble import fuse_channel, fuse_trial
from .model import build_model, predict, variant_spec
from .trainer import TrainConfig, train_channel_model

log = logging.getLogger(__name__)

METRICS = ("acc", "sens", "spec", "prec", "fm", "gm")
CSV_COLUMNS = ("fold", "region", "problem", "acc", "sens", "spec", "prec", "fm", "gm",
               "ties_level1", "ties_level2")
NA = None  # metric whose denominator is zero


# --------------------------------------------------------------------------
# confusion matrices and metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with Low (class 0) as the positive class."""

    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn)

    @classmethod
    def from_labels(cls, y_true, y_pred, positive: int = LOW) -> "ConfusionMatrix":
        t = np.asarray(y_true) == positive
        p = np.asarray(y_pred) == positive
        return cls(int(np.sum(t & p)), int(np.sum(t & ~p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)))


def _ratio(num: float, den: float):
    return NA if den == 0 else num / den


def compute_metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Accuracy, sensitivity, specificity, precision, F-measure and G-mean (all as fractions)."""
    if cm.n == 0:
        raise ValueError("empty confusion matrix")
    sens = _ratio(cm.tp, cm.fn + cm.tp)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    fm = NA if prec is NA or sens is NA else _ratio(2 * prec * sens, prec + sens)
    gm = NA if spec is NA or sens is NA else math.sqrt(spec * sens)
    return dict(acc=(cm.tp + cm.tn) / cm.n, sens=sens, spec=spec, prec=prec, fm=fm, gm=gm)


def format_percent(fraction: float, digits: int = 2, truncate: bool = True) -> str:
    """Percentage with ``digits`` decimals.

    Accuracies are truncated (126/128 -> '98.43%', 125/128 -> '97.65%'), the
    way fold accuracies are usually printed; ``truncate=False`` rounds half up
    instead (45/46 -> '97.83%'), as used for confusion-matrix row shares.
    """
    q = Decimal(1).scaleb(-digits)
    mode = ROUND_DOWN if truncate else ROUND_HALF_UP
    return f"{(Decimal(repr(float(fraction))) * 100).quantize(q, rounding=mode)}%"


def mean_std(values) -> tuple[float | None, float | None]:
    """Mean and population std over the defined (non-NA) values."""
    vals = [v for v in values if v is not NA]
    if not vals:
        return NA, NA
    arr = np.array(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# --------------------------------------------------------------------------
# Pearson correlation
# --------------------------------------------------------------------------

def pearson(x, y) -> float | None:
    """Pearson r; NA when exactly one of the vectors is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0 and sy == 0:
        raise ValueError("both vectors are constant")
    if sx == 0 or sy == 0:
        return NA
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def channel_correlation_matrix(values: np.ndarray) -> np.ndarray:
    """Pairwise Pearson r between the columns of ``values`` ``(n_trials, n_channels)``.

    Entries involving a constant column are NaN (not applicable).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("need a (n_trials >= 2, n_channels) matrix")
    c = values.shape[1]
    out = np.full((c, c), np.nan)
    constant = values.std(axis=0) == 0
    for i in range(c):
        if constant[i]:
            continue
        out[i, i] = 1.0
        for j in range(i + 1, c):
            if not constant[j]:
                out[i, j] = out[j, i] = pearson(values[:, i], values[:, j])
    return out


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    cm: ConfusionMatrix
    metrics: dict
    ties_level1: int
    ties_level2: int
    window_acc: float  # single-model accuracy over every (channel, window) of the test trials
    channel_acc: float  # first-level (per-channel) accuracy averaged over channels
    n_test: int


@dataclass
class CVReport:
    problem: str
    region: str
    variant: str
    tw_seconds: int | None
    window_samples: int
    k: int
    channels: list[int]
    channel_names: list[str]
    folds: list[FoldResult]
    predictions: np.ndarray  # trial-level decision per trial
    labels: np.ndarray
    test_fold: np.ndarray  # which fold each trial was tested in
    vote_fraction: np.ndarray  # (n_trials, n_channels) share of windows voting High
    channel_window_acc: np.ndarray  # per channel, averaged over folds
    channel_decision_acc: np.ndarray
    histories: dict = field(default_factory=dict)

    @property
    def confusion(self) -> ConfusionMatrix:
        total = ConfusionMatrix(0, 0, 0, 0)
        for f in self.folds:
            total = total + f.cm
        return total

    def summary(self) -> dict[str, tuple]:
        return {m: mean_std([f.metrics[m] for f in self.folds]) for m in METRICS}

    @property
    def mean_accuracy(self) -> float:
        return self.summary()["acc"][0]

    @property
    def mean_window_accuracy(self) -> float:
        return float(np.mean([f.window_acc for f in self.folds]))

    @property
    def mean_channel_accuracy(self) -> float:
        return float(np.mean([f.channel_acc for f in self.folds]))


def _channel_seed(seed: int, fold: int, channel: int) -> list[int]:
    return [int(seed), int(fold), int(channel)]


def _train_and_predict_channel(ds: EegDataset, labels, plan, channel: int, variant: str, tw, window_samples,
                               cfg: TrainConfig, seed: int):
    """All folds for one channel: returns per-fold (test labels, test probs, history)."""
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    wins = channel_windows(ds, channel, tw, window_samples)
    n, k_win, w = wins.shape
    spec = variant_spec(variant, input_length=w)
    out = []
    for fold in range(plan.k):
        train = plan.train_indices(fold)
        test = plan.folds[fold]
        s = _channel_seed(seed, fold, channel)
        model = build_model(spec, np.random.default_rng(np.random.SeedSequence(s + [0x1A1])), variant, channel, dtype)
        x = wins[train].reshape(-1, w)
        y = np.repeat(labels[train], k_win)
        model, hist = train_channel_model(model, x, y, cfg, seed=s)
        pred, probs = predict(model, wins[test].reshape(-1, w))
        out.append((pred.reshape(len(test), k_win), probs.reshape(len(test), k_win, 2), hist))
        log.info("channel %d fold %d trained: final loss %.4f", channel, fold, hist[-1].mean_loss)
    return out


_WORKER_DS = None


def _worker_init(ds):
    global _WORKER_DS
    _WORKER_DS = ds


def _worker(args):
    return _train_and_predict_channel(_WORKER_DS, *args)


def run_cv(ds: EegDataset, problem: str = "valence", region: str = "FRONT", variant: str = "M2",
           tw_seconds: int | None = 5, cfg: TrainConfig | None = None, k: int = 10, seed: int = 0,
           region_map: dict | None = None, threads: int = 1, window_samples: int | None = None,
           channels: list[int] | None = None) -> CVReport:
    """Stratified k-fold evaluation of the two-level ensemble.

    For every fold one model per region channel is trained on the windows of
    the training trials; test trials are classified by window vote per
    channel and channel vote per trial. Randomness derives from ``seed`` per
    (fold, channel, epoch), so results do not depend on ``threads``.
    """
    cfg = cfg or TrainConfig(seed=seed)
    labels = ds.labels(problem)
    chans = list(channels) if channels is not None else select_region(ds, region, region_map)
    _, w = window_layout(ds.n_samples, tw_seconds, window_samples)
    plan = make_folds(labels, k, seed)

    jobs = [(labels, plan, c, variant, tw_seconds, window_samples, cfg, seed) for c in chans]
    if threads > 1 and len(chans) > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init, initargs=(ds,)) as ex:
            results = list(ex.map(_worker, jobs))
    else:
        results = [_train_and_predict_channel(ds, *j) for j in jobs]

    n = ds.n_trials
    predictions = np.full(n, -1)
    test_fold = np.full(n, -1)
    vote_fraction = np.full((n, len(chans)), np.nan)
    ch_win_acc = np.zeros((plan.k, len(chans)))
    ch_dec_acc = np.zeros((plan.k, len(chans)))
    folds = []
    for fold in range(plan.k):
        test = plan.folds[fold]
        y = labels[test]
        decisions = []
        for t_pos, trial in enumerate(test):
            chan_dec = [fuse_channel(c, results[ci][fold][0][t_pos], results[ci][fold][1][t_pos])
                        for ci, c in enumerate(chans)]
            decisions.append(fuse_trial(chan_dec))
            vote_fraction[trial] = [cd.result.fraction_high for cd in chan_dec]
        pred = np.array([d.label for d in decisions])
        predictions[test] = pred
        test_fold[test] = fold
        for ci in range(len(chans)):
            ch_win_acc[fold, ci] = float((results[ci][fold][0] == y[:, None]).mean())
            ch_dec_acc[fold, ci] = float(np.mean([d.channels[ci].label == yt for d, yt in zip(decisions, y)]))
        cm = ConfusionMatrix.from_labels(y, pred)
        folds.append(FoldResult(
            fold=fold + 1, cm=cm, metrics=compute_metrics(cm),
            ties_level1=sum(d.ties_level1 for d in decisions),
            ties_level2=sum(d.ties_level2 for d in decisions),
            window_acc=float(ch_win_acc[fold].mean()), channel_acc=float(ch_dec_acc[fold].mean()),
            n_test=len(test),
        ))
    histories = {(fold + 1, c): results[ci][fold][2] for ci, c in enumerate(chans) for fold in range(plan.k)}
    return CVReport(
        problem=problem, region=region.upper(), variant=variant, tw_seconds=tw_seconds, window_samples=w, k=k,
        channels=chans, channel_names=[ds.channel_names[c] for c in chans], folds=folds,
        predictions=predictions, labels=labels, test_fold=test_fold, vote_fraction=vote_fraction,
        channel_window_acc=ch_win_acc.mean(axis=0), channel_decision_acc=ch_dec_acc.mean(axis=0),
        histories=histories,
    )


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def _cell(metric: str, value) -> str:
    if value is NA:
        return "NA"
    return repr(float(value) * 100 if metric == "acc" else float(value))


def report_rows(report: CVReport) -> list[list[str]]:
    """CSV rows: one per fold, then ``mean`` and ``std``. Accuracy is in percent."""
    if not report.folds:
        raise ValueError("report has no folds")
    rows = []
    for f in report.folds:
        rows.append([str(f.fold), report.region, report.problem]
                    + [_cell(m, f.metrics[m]) for m in METRICS]
                    + [str(f.ties_level1), str(f.ties_level2)])
    summ = report.summary()
    t1 = sum(f.ties_level1 for f in report.folds)
    t2 = sum(f.ties_level2 for f in report.folds)
    rows.append(["mean", report.region, report.problem] + [_cell(m, summ[m][0]) for m in METRICS] + [str(t1), str(t2)])
    rows.append(["std", report.region, report.problem] + [_cell(m, summ[m][1]) for m in METRICS] + ["", ""])
    return rows


def write_report_csv(report: CVReport, path) -> None:
    rows = report_rows(report)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)


def read_report_csv(path) -> list[dict]:
    """Parse a report CSV back into dicts of floats (``None`` for NA)."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rec = {"fold": row["fold"], "region": row["region"], "problem": row["problem"]}
            for m in METRICS:
                rec[m] = None if row[m] == "NA" else float(row[m])
            for t in ("ties_level1", "ties_level2"):
                rec[t] = int(row[t]) if row[t] else None
            out.append(rec)
    return out


def _fmt(metric: str, value) -> str:
    if value is NA:
        return "NA"
    return format_percent(value)[:-1] if metric == "acc" else f"{value:.4f}"


def format_report(report: CVReport) -> str:
    """Human-readable fold table plus the pooled confusion matrix."""
    if not report.folds:
        raise ValueError("report has no folds")
    pos = "LV" if report.problem == "valence" else "LA"
    neg = "HV" if report.problem == "valence" else "HA"
    lines = [
        f"{report.k}-fold cross-validation  problem={neg} vs {pos}  region={report.region}  "
        f"variant={report.variant}  window={report.window_samples} samples",
        "",
        f"{'fold':>5} {'acc%':>8} {'sens':>7} {'spec':>7} {'prec':>7} {'fm':>7} {'gm':>7} {'tie1':>5} {'tie2':>5}",
    ]
    for f in report.folds:
        lines.append(f"{'K' + str(f.fold):>5} " + " ".join(
            f"{_fmt(m, f.metrics[m]):>{8 if m == 'acc' else 7}}" for m in METRICS)
            + f" {f.ties_level1:>5} {f.ties_level2:>5}")
    summ = report.summary()
    for label, idx in (("mean", 0), ("std", 1)):
        cells = []
        for m in METRICS:
            v = summ[m][idx]
            if v is NA:
                cells.append("NA")
            elif m == "acc":
                cells.append(f"{v * 100:.2f}")
            else:
                cells.append(f"{v:.4f}")
        lines.append(f"{label:>5} " + " ".join(f"{c:>{8 if i == 0 else 7}}" for i, c in enumerate(cells)))
    cm = report.confusion
    n_low, n_high = cm.tp + cm.fn, cm.fp + cm.tn

    def share(a, b):
        return format_percent(a / b, truncate=False) if b else "NA"

    lines += [
        "",
        f"confusion matrix (positive class = {pos}, pooled over folds)",
        f"{'':>14}{'pred ' + pos:>18}{'pred ' + neg:>18}",
        f"{'actual ' + pos:>14}{cm.tp:>8} ({share(cm.tp, n_low):>8}){cm.fn:>7} ({share(cm.fn, n_low):>8})",
        f"{'actual ' + neg:>14}{cm.fp:>8} ({share(cm.fp, n_high):>8}){cm.tn:>7} ({share(cm.tn, n_high):>8})",
        "",
        f"mean single-window accuracy  {report.mean_window_accuracy * 100:.2f}",
        f"mean first-level accuracy    {report.mean_channel_accuracy * 100:.2f}",
        f"mean second-level accuracy   {report.mean_accuracy * 100:.2f}",
    ]
    return "\n".join(lines) + "\n"


def emit_report(report: CVReport, out_dir, stem: str | None = None) -> dict[str, Path]:
    """Write ``<stem>.csv`` (per fold) and ``<stem>.txt`` (tables) into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"cv_{report.problem}_{report.region}_{report.variant}"
    paths = {"csv": out_dir / f"{stem}.csv", "txt": out_dir / f"{stem}.txt"}
    write_report_csv(report, paths["csv"])
    paths["txt"].write_text(format_report(report))
    return paths


def write_channel_csv(report: CVReport, path) -> None:
    """Per-channel single-window and first-level accuracies."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["channel", "name", "window_acc", "first_level_acc"])
        for c, name, wa, da in zip(report.channels, report.channel_names,
                                   report.channel_window_acc, report.channel_decision_acc):
            w.writerow([c, name, repr(float(wa)), repr(float(da))])


def write_matrix_csv(matrix: np.ndarray, names: list[str], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([""] + list(names))
        for name, row in zip(names, matrix):
            w.writerow([name] + ["NA" if np.isnan(v) else f"{v:.4f}" for v in row])
