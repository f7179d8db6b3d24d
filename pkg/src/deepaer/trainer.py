"""Adam and the per-channel mini-batch training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .model import ModelWeights, backward, forward, predict

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments and step counter. The update follows

    theta <- theta - alpha * m_hat / sqrt(v_hat + eps)

    i.e. epsilon sits inside the square root.
    """

    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.alpha > 0 and self.eps > 0):
            raise ValueError("alpha and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One in-place Adam update of every array in ``params``."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise nn.ShapeError(f"gradient for {name}: {None if g is None else g.shape} vs {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.alpha * (m / bc1) / np.sqrt(v / bc2 + state.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True
    alpha: float = 1e-4
    precision: str = "float32"
    track_accuracy: bool = True  # eval-mode accuracy on the training set after each epoch

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs it)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision is float32 or float64")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_acc: float


def epoch_rng(seed, epoch: int) -> np.random.Generator:
    """Generator for one epoch; ``seed`` may be an int or a sequence of ints."""
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return np.random.default_rng(np.random.SeedSequence(entropy + [int(epoch)]))


def train_channel_model(model: ModelWeights, windows: np.ndarray, labels: np.ndarray,
                        cfg: TrainConfig, seed=None) -> tuple[ModelWeights, list[EpochRecord]]:
    """Mini-batch Adam on one channel's windows; ``model`` is updated in place and returned.

    ``seed`` (int or int sequence) overrides ``cfg.seed`` so callers can derive
    per-(fold, channel) streams. A trailing batch of size 1 is dropped for the
    epoch because batch norm cannot normalise it.
    """
    windows = np.asarray(windows, dtype=model.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(windows)
    if n == 0:
        raise ValueError("empty training set")
    if n < 2:
        raise ValueError("need at least 2 training windows")
    if np.unique(labels).size < 2:
        log.warning("training set for channel %s holds a single class", model.channel)
    seed = cfg.seed if seed is None else seed
    opt = AdamState(alpha=cfg.alpha)
    history = []
    bs = cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        rng = epoch_rng(seed, epoch)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses, sizes = [], []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            if len(idx) < 2:
                continue
            logits, _, cache = forward(model, windows[idx], train=True, rng=rng)
            loss, _, dlogits = nn.softmax_cross_entropy(logits, labels[idx])
            grads = backward(model, cache, dlogits)
            adam_step(model.params, grads, opt)
            losses.append(loss)
            sizes.append(len(idx))
        mean_loss = float(np.average(losses, weights=sizes))
        acc = float("nan")
        if cfg.track_accuracy or epoch == cfg.epochs:
            pred, _ = predict(model, windows)
            acc = float((pred == labels).mean())
        history.append(EpochRecord(epoch, mean_loss, acc))
        log.debug("channel %s epoch %d loss %.4f acc %.4f", model.channel, epoch, mean_loss, acc)
    return model, history


def predict_windows(model: ModelWeights, windows: np.ndarray):
    """Eval-mode window labels (argmax, ties to class 0) and class probabilities."""
    return predict(model, windows)


def smoothed_loss_is_nonincreasing(history: list[EpochRecord], width: int = 5, slack: float = 0.0) -> bool:
    """True when the ``width``-epoch moving average of the loss never goes up (beyond ``slack``)."""
    losses = np.array([h.mean_loss for h in history])
    if len(losses) < width + 1:
        return True
    ma = np.convolve(losses, np.ones(width) / width, mode="valid")
    return bool(np.all(np.diff(ma) <= slack))


def write_loss_curve(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_loss", "train_acc"])
        for h in history:
            acc = "" if math.isnan(h.train_acc) else repr(h.train_acc)
            w.writerow([h.epoch, repr(h.mean_loss), acc])
