"""Two-level majority-vote fusion.

Level one fuses the K window predictions of a channel into a channel
decision; level two fuses the channel decisions of a region into the trial
decision. Ties (every voter count used here is even) are broken by the
summed class probabilities of the voters, then in favour of class 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import segment_channel, zscore
from .model import ModelWeights, predict


@dataclass(frozen=True)
class VoteRecord:
    voter: int
    label: int
    probs: tuple[float, float]


@dataclass(frozen=True)
class VoteResult:
    label: int
    tally: tuple[int, int]
    tie: bool
    prob_sums: tuple[float, float]

    @property
    def fraction_high(self) -> float:
        return self.tally[1] / (self.tally[0] + self.tally[1])


def _fuse(n0: int, n1: int, p0: float, p1: float) -> tuple[int, bool]:
    if n1 > n0:
        return 1, False
    if n0 > n1:
        return 0, False
    return (1 if p1 > p0 else 0), True


def majority_vote(votes) -> VoteResult:
    """Fuse a list of :class:`VoteRecord`. Order of the votes never matters."""
    votes = list(votes)
    if not votes:
        raise ValueError("majority vote over an empty list")
    labels = np.array([v.label for v in votes])
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("votes must be 0 or 1")
    probs = np.array([v.probs for v in votes], dtype=np.float64)
    return fuse_arrays(labels, probs)


def fuse_arrays(labels: np.ndarray, probs: np.ndarray) -> VoteResult:
    """Array form of :func:`majority_vote`: ``labels`` ``(n,)`` and ``probs`` ``(n, 2)``."""
    n1 = int(np.count_nonzero(labels))
    n0 = len(labels) - n1
    # sorted summation keeps the sums independent of vote order
    p0 = float(np.sum(np.sort(probs[:, 0])))
    p1 = float(np.sum(np.sort(probs[:, 1])))
    label, tie = _fuse(n0, n1, p0, p1)
    return VoteResult(label, (n0, n1), tie, (p0, p1))


@dataclass(frozen=True)
class ChannelDecision:
    channel: int
    result: VoteResult
    window_labels: np.ndarray
    window_probs: np.ndarray

    @property
    def label(self) -> int:
        return self.result.label

    def vote(self) -> VoteRecord:
        # a channel votes with the mean class probability of its windows
        p = self.window_probs.mean(axis=0)
        return VoteRecord(self.channel, self.result.label, (float(p[0]), float(p[1])))


@dataclass(frozen=True)
class TrialDecision:
    label: int
    result: VoteResult
    channels: list[ChannelDecision]

    @property
    def ties_level1(self) -> int:
        return sum(c.result.tie for c in self.channels)

    @property
    def ties_level2(self) -> int:
        return int(self.result.tie)


def fuse_channel(channel: int, window_labels: np.ndarray, window_probs: np.ndarray) -> ChannelDecision:
    res = fuse_arrays(np.asarray(window_labels), np.asarray(window_probs, np.float64))
    return ChannelDecision(channel, res, np.asarray(window_labels), np.asarray(window_probs))


def fuse_trial(channels: list[ChannelDecision]) -> TrialDecision:
    if not channels:
        raise ValueError("no channel decisions to fuse")
    res = majority_vote([c.vote() for c in channels])
    return TrialDecision(res.label, res, list(channels))


def classify_channel(model: ModelWeights, trial: np.ndarray, channel: int,
                     tw_seconds: int | None = 5, window_samples: int | None = None) -> ChannelDecision:
    """Segment one channel of a ``(C, T)`` trial, z-score the windows, predict and fuse them."""
    if model.channel >= 0 and model.channel != channel:
        raise ValueError(f"model was trained for channel {model.channel}, not {channel}")
    wins = zscore(segment_channel(np.asarray(trial)[channel], tw_seconds, window_samples)).astype(np.float32)
    labels, probs = predict(model, wins)
    return fuse_channel(channel, labels, probs)


def classify_trial(models: dict[int, ModelWeights], trial: np.ndarray, channels,
                   tw_seconds: int | None = 5, window_samples: int | None = None) -> TrialDecision:
    """Second-level decision over the given channel indices (usually a brain region)."""
    missing = [c for c in channels if c not in models]
    if missing:
        raise KeyError(f"no trained model for channels {missing}")
    return fuse_trial([classify_channel(models[c], trial, c, tw_seconds, window_samples) for c in channels])
