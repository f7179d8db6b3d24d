import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepaer import ensemble as E
from deepaer.data import segment_channel, zscore
from deepaer.model import build_model, predict, variant_spec


def oracle_vote(labels, p0s, p1s):
    """Documented rule on exact rationals: strict majority, then larger probability sum, then 0."""
    n1 = sum(labels)
    n0 = len(labels) - n1
    if n1 != n0:
        return int(n1 > n0), False
    s0, s1 = sum(map(Fraction, p0s)), sum(map(Fraction, p1s))
    return int(s1 > s0), True


def oracle_two_level(window_labels, window_p0):
    """window_labels, window_p0: (C, K) lists. Channel votes carry the mean window probability."""
    chan_labels, chan_p0, chan_p1 = [], [], []
    for labels, p0 in zip(window_labels, window_p0):
        p0f = [Fraction(p) for p in p0]
        lab, _ = oracle_vote(labels, p0f, [1 - p for p in p0f])
        chan_labels.append(lab)
        m0 = sum(p0f) / len(p0f)
        chan_p0.append(m0)
        chan_p1.append(1 - m0)
    return oracle_vote(chan_labels, chan_p0, chan_p1)


def grid_probs(rng, shape, denom=16):
    # multiples of 1/16 keep every float sum and mean exact, so float and rational oracles agree
    return rng.integers(0, denom + 1, shape) / denom


def vote(label, p1, voter=0):
    return E.VoteRecord(voter, label, (1 - p1, p1))


class TestMajorityVote:
    def test_examples(self):
        r = E.majority_vote([vote(1, 0.8), vote(1, 0.7), vote(0, 0.4)])
        assert (r.label, r.tie, r.tally) == (1, False, (1, 2))
        r = E.majority_vote([E.VoteRecord(0, 1, (0.4, 0.6)), E.VoteRecord(1, 0, (0.5, 0.5))])
        assert r.tie and r.label == 1
        # [1, 0] with class sums 1.1 (class 0) vs 0.9 (class 1) -> 0
        r = E.majority_vote([E.VoteRecord(0, 1, (0.45, 0.55)), E.VoteRecord(1, 0, (0.65, 0.35))])
        assert r.prob_sums == pytest.approx((1.1, 0.9))
        assert (r.label, r.tie) == (0, True)

    @pytest.mark.parametrize("n", [1, 2, 5, 12, 32])
    def test_unanimous_zero(self, n):
        assert E.majority_vote([vote(0, 0.99)] * n).label == 0

    def test_exact_tie_goes_to_zero(self):
        r = E.majority_vote([vote(1, 0.5), vote(0, 0.5)])
        assert r.tie and r.label == 0

    def test_empty(self):
        with pytest.raises(ValueError):
            E.majority_vote([])

    def test_bad_label(self):
        with pytest.raises(ValueError):
            E.majority_vote([vote(2, 0.5)])

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_exhaustive_small_cases(self, n):
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        for labels in itertools.product((0, 1), repeat=n):
            for p1s in itertools.product(grid, repeat=min(n, 3)):
                p1s = (p1s * n)[:n]
                r = E.majority_vote([vote(l, p, i) for i, (l, p) in enumerate(zip(labels, p1s))])
                expected = oracle_vote(labels, [1 - p for p in p1s], p1s)
                assert (r.label, r.tie) == expected

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=40), st.randoms())
    def test_permutation_invariant(self, votes, rnd):
        records = [vote(l, p, i) for i, (l, p) in enumerate(votes)]
        shuffled = records[:]
        rnd.shuffle(shuffled)
        a, b = E.majority_vote(records), E.majority_vote(shuffled)
        assert (a.label, a.tie, a.tally, a.prob_sums) == (b.label, b.tie, b.tally, b.prob_sums)

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 16)), min_size=1, max_size=20),
           st.sampled_from([3, 5, 7]))
    def test_odd_duplication_idempotent(self, votes, factor):
        records = [vote(l, p / 16) for l, p in votes]
        a, b = E.majority_vote(records), E.majority_vote(records * factor)
        assert a.label == b.label

    @settings(max_examples=100)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=30), st.integers(0, 2**31))
    def test_flipping_within_margin(self, labels, seed):
        labels = np.array(labels)
        rng = np.random.default_rng(seed)
        probs = grid_probs(rng, len(labels))
        base = E.fuse_arrays(labels, np.c_[1 - probs, probs])
        margin = abs(int(labels.sum()) * 2 - len(labels))
        if margin == 0:
            return
        winners = np.flatnonzero(labels == base.label)
        # flipping fewer than margin/2 winning votes leaves a strict majority
        flips = rng.choice(winners, (margin - 1) // 2, replace=False)
        flipped = labels.copy()
        flipped[flips] = 1 - flipped[flips]
        assert E.fuse_arrays(flipped, np.c_[1 - probs, probs]).label == base.label


class TestTwoLevel:
    def _trial(self, rng, c, k, bias=0.5):
        labels = (rng.random((c, k)) < bias).astype(int)
        p0 = grid_probs(rng, (c, k))
        return labels, p0

    def test_random_configurations_match_oracle(self):
        rng = np.random.default_rng(0)
        ties = [0, 0]
        for trial in range(1000):
            c = rng.choice([1, 2, 4, 6, 12])
            k = rng.choice([4, 8])
            labels, p0 = self._trial(rng, c, k, rng.uniform(0.2, 0.8))
            chans = [E.fuse_channel(i, labels[i], np.c_[p0[i], 1 - p0[i]]) for i in range(c)]
            got = E.fuse_trial(chans)
            assert (got.label, got.result.tie) == oracle_two_level(labels.tolist(), p0.tolist())
            ties[0] += got.ties_level1
            ties[1] += got.ties_level2
        assert ties[0] > 0 and ties[1] > 0  # the sample actually exercised the tie rules

    def test_cent_two_two_split_exhaustive(self):
        for labels in itertools.product((0, 1), repeat=4):
            if sum(labels) != 2:
                continue
            for p1 in itertools.product([0.25, 0.5, 0.75], repeat=4):
                chans = [E.ChannelDecision(i, E.VoteResult(l, (1 - l, l), False, (0, 0)),
                                           np.array([l]), np.array([[1 - p, p]]))
                         for i, (l, p) in enumerate(zip(labels, p1))]
                got = E.fuse_trial(chans)
                assert got.ties_level2 == 1
                assert got.label == oracle_vote(labels, [1 - p for p in p1], p1)[0]

    def test_front_seven_of_twelve_high(self):
        labels = np.array([1] * 7 + [0] * 5)
        chans = [E.fuse_channel(i, np.full(12, l), np.tile([1 - l, l], (12, 1))) for i, l in enumerate(labels)]
        assert E.fuse_trial(chans).label == 1

    @pytest.mark.parametrize("label", [0, 1])
    @pytest.mark.parametrize("c", [1, 4, 12, 32])
    def test_unanimous(self, label, c):
        rng = np.random.default_rng(c)
        chans = [E.fuse_channel(i, np.full(12, label), np.c_[grid_probs(rng, 12), grid_probs(rng, 12)])
                 for i in range(c)]
        assert E.fuse_trial(chans).label == label

    def test_seven_of_twelve_windows_low(self):
        ch = E.fuse_channel(0, np.array([0] * 7 + [1] * 5), np.full((12, 2), 0.5))
        assert ch.label == 0 and not ch.result.tie

    def test_empty_trial(self):
        with pytest.raises(ValueError):
            E.fuse_trial([])


class TestClassify:
    def models(self, channels, length=672):
        return {c: build_model(variant_spec("M2", length), np.random.default_rng(c), "M2", c) for c in channels}

    def test_channel_matches_recomputation(self):
        rng = np.random.default_rng(0)
        models = self.models([0, 1])
        for _ in range(100):
            trial = rng.standard_normal((2, 8064)).astype(np.float32) * rng.uniform(0.5, 3)
            ch = rng.integers(0, 2)
            got = E.classify_channel(models[ch], trial, ch, 5)
            wins = zscore(segment_channel(trial[ch], 5)).astype(np.float32)
            labels, probs = predict(models[ch], wins)
            n1 = labels.sum()
            if n1 != 6:
                expected = int(n1 > 6)
            else:
                expected = int(np.sort(probs[:, 1].astype(np.float64)).sum() > np.sort(probs[:, 0].astype(np.float64)).sum())
            assert got.label == expected
            np.testing.assert_array_equal(got.window_labels, labels)

    def test_trial_uses_region_channels(self):
        rng = np.random.default_rng(1)
        models = self.models([0, 1, 2])
        trial = rng.standard_normal((4, 8064)).astype(np.float32)
        dec = E.classify_trial(models, trial, [0, 2], 5)
        assert [c.channel for c in dec.channels] == [0, 2]
        labels = [c.label for c in dec.channels]
        if labels[0] == labels[1]:
            assert dec.label == labels[0]

    def test_model_channel_mismatch(self):
        models = self.models([0])
        with pytest.raises(ValueError):
            E.classify_channel(models[0], np.zeros((2, 8064)), 1, 5)

    def test_missing_model(self):
        with pytest.raises(KeyError):
            E.classify_trial(self.models([0]), np.zeros((2, 8064)), [0, 1], 5)
