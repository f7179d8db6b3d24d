import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepaer import data as D


def tiny_dataset(n=8, c=3, t=96, seed=0, names=None):
    rng = np.random.default_rng(seed)
    return D.EegDataset(
        trials=rng.standard_normal((n, c, t)).astype(np.float32),
        channel_names=names or [f"c{i}" for i in range(c)],
        sample_rate=128.0,
        valence=rng.uniform(1, 9, n), arousal=rng.uniform(1, 9, n),
        subject_ids=np.zeros(n, int), synthetic=True,
    )


class TestLabels:
    @pytest.mark.parametrize("r,label", [(4.99, D.LOW), (5.0, D.HIGH), (1.0, D.LOW), (9.0, D.HIGH)])
    def test_threshold(self, r, label):
        assert D.binarize_label(r) == label

    @pytest.mark.parametrize("r", [0.99, 9.01, float("nan")])
    def test_out_of_range(self, r):
        with pytest.raises(D.RatingRangeError):
            D.binarize_label(r)

    @given(st.floats(1, 9), st.floats(1, 9))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert D.binarize_label(lo) <= D.binarize_label(hi)


class TestZscore:
    def test_hand_value(self):
        np.testing.assert_allclose(D.zscore(np.array([1.0, 2.0, 3.0])), [-1.224744871391589, 0, 1.224744871391589],
                                   rtol=1e-12)

    def test_constant(self):
        assert not D.zscore(np.full(10, 3.3)).any()

    def test_too_short(self):
        with pytest.raises(ValueError):
            D.zscore(np.array([1.0]))

    @settings(max_examples=60)
    @given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e3, 1e3)))
    def test_moments_and_idempotence(self, x):
        z = D.zscore(x)
        if x.var() < 1e-9:
            return
        assert abs(z.mean()) < 1e-9
        assert abs(z.var() - 1) < 1e-8
        np.testing.assert_allclose(D.zscore(z), z, atol=1e-9)

    def test_per_window_scope(self):
        x = np.vstack([np.arange(10.0), 100 * np.arange(10.0)])
        z = D.zscore(x)
        np.testing.assert_allclose(z[0], z[1])


class TestWindows:
    @pytest.mark.parametrize("tw,k,w", [(5, 12, 672), (10, 6, 1344), (15, 4, 2016)])
    def test_layout(self, tw, k, w):
        assert D.window_layout(8064, tw) == (k, w)
        assert D.segment_channel(np.zeros(8064), tw).shape == (k, w)

    def test_partition(self):
        x = np.random.default_rng(0).standard_normal(8064)
        np.testing.assert_array_equal(D.segment_channel(x, 5).ravel(), x)

    @given(st.integers(1, 3000), st.integers(1, 400))
    def test_partition_any_length(self, n, w):
        x = np.arange(n, dtype=float)
        if w > n:
            with pytest.raises(ValueError):
                D.segment_channel(x, window_samples=w)
            return
        s = D.segment_channel(x, window_samples=w)
        assert s.shape == (n // w, w)
        np.testing.assert_array_equal(s.ravel(), x[:s.size])

    @pytest.mark.parametrize("tw", [7, 0, -5])
    def test_bad_window_seconds(self, tw):
        with pytest.raises(ValueError):
            D.window_layout(8064, tw)

    def test_window_longer_than_trial(self):
        with pytest.raises(ValueError):
            D.segment_channel(np.zeros(100), window_samples=101)

    def test_deap_training_count(self):
        # 1280 trials -> folds of 128; 1152 training trials x 12 windows
        ds = D.generate_synthetic(1280, 1, 8064, seed=0)
        plan = D.make_folds(ds.labels("valence"), 10, 0)
        assert [len(f) for f in plan.folds] == [128] * 10
        batch, test = D.build_training_windows(ds, plan, 0, 0, 5)
        assert len(test) == 128 and len(batch) == 13824
        assert batch.windows.shape == (13824, 672)
        assert not np.intersect1d(batch.trial_ids, test).size
        prov = set(zip(batch.trial_ids.tolist(), batch.window_idx.tolist()))
        assert len(prov) == 13824

    def test_no_leakage_any_fold(self):
        ds = tiny_dataset(n=30, t=120)
        plan = D.make_folds(ds.labels("valence"), 5, 1)
        for f in range(5):
            batch, test = D.build_training_windows(ds, plan, f, 1, window_samples=40)
            assert not np.intersect1d(batch.trial_ids, test).size
            assert len(batch) == 3 * (30 - len(test))


class TestFolds:
    def test_deap_sized(self):
        labels = np.r_[np.zeros(572, int), np.ones(708, int)]
        plan = D.make_folds(labels, 10, 0)
        assert all(len(f) == 128 for f in plan.folds)

    @pytest.mark.filterwarnings("ignore:class . has")
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=10, max_size=300), st.integers(2, 10), st.integers(0, 1000))
    def test_stratified_partition(self, labels, k, seed):
        labels = np.array(labels)
        if len(np.unique(labels)) < 2 or len(labels) < k:
            with pytest.raises(ValueError):
                D.make_folds(labels, k, seed)
            return
        plan = D.make_folds(labels, k, seed)
        allidx = np.concatenate(plan.folds)
        assert sorted(allidx.tolist()) == list(range(len(labels)))
        sizes = [len(f) for f in plan.folds]
        assert max(sizes) - min(sizes) <= 1
        for c in (0, 1):
            per = [int((labels[f] == c).sum()) for f in plan.folds]
            assert max(per) - min(per) <= 1
        np.testing.assert_array_equal(plan.class_counts[:, 1], [(labels[f] == 1).sum() for f in plan.folds])

    def test_seed_determinism(self):
        labels = np.arange(50) % 2
        a, b = D.make_folds(labels, 5, 3), D.make_folds(labels, 5, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))


class TestRegions:
    def deap_like(self):
        return tiny_dataset(n=2, c=32, t=10, names=list(D.DEAP_CHANNELS))

    def test_sizes(self):
        ds = self.deap_like()
        sizes = {r: len(D.select_region(ds, r)) for r in D.REGION_NAMES}
        assert sizes == dict(FRONT=12, CENT=4, PERI=6, OCCIP=4, ALL=32)

    def test_order_and_names(self):
        ds = self.deap_like()
        idx = D.select_region(ds, "cent")
        assert [ds.channel_names[i] for i in idx] == ["C3", "C4", "CP1", "CP2"]

    def test_default_lists_are_deap_channels(self):
        for chans in D.REGIONS.values():
            assert set(chans) <= set(D.DEAP_CHANNELS)

    def test_unknown_region(self):
        with pytest.raises(ValueError):
            D.select_region(self.deap_like(), "TEMPORAL")

    def test_missing_channel(self):
        with pytest.raises(D.UnknownChannelError):
            D.select_region(tiny_dataset(), "FRONT")

    def test_override_file(self, tmp_path):
        p = tmp_path / "regions.json"
        p.write_text(json.dumps({"front": ["Fz", "Cz"], "mine": ["O1"]}))
        rmap = D.load_region_map(p)
        ds = self.deap_like()
        assert D.select_region(ds, "FRONT", rmap) == [D.DEAP_CHANNELS.index("Fz"), D.DEAP_CHANNELS.index("Cz")]
        assert D.select_region(ds, "MINE", rmap) == [D.DEAP_CHANNELS.index("O1")]
        assert len(D.select_region(ds, "CENT", rmap)) == 4

    def test_bad_override_file(self, tmp_path):
        p = tmp_path / "regions.json"
        p.write_text("[1, 2]")
        with pytest.raises(ValueError):
            D.load_region_map(p)


class TestContainer:
    def test_round_trip(self, tmp_path):
        ds = tiny_dataset()
        man = D.save_dataset(ds, tmp_path / "d.json")
        back = D.load_dataset(man)
        assert back.trials.tobytes() == ds.trials.tobytes()
        assert back.channel_names == ds.channel_names
        np.testing.assert_array_equal(back.valence, ds.valence)
        assert back.synthetic

    def test_blob_layout_little_endian(self, tmp_path):
        ds = tiny_dataset(n=2, c=2, t=3)
        D.save_dataset(ds, tmp_path / "d.json")
        raw = (tmp_path / "d.f32").read_bytes()
        assert raw == ds.trials.astype("<f4").tobytes(order="C")

    def test_short_blob(self, tmp_path):
        man = D.save_dataset(tiny_dataset(), tmp_path / "d.json")
        blob = tmp_path / "d.f32"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(D.ContainerSizeError):
            D.load_dataset(man)

    def test_deap_counts_enforced(self, tmp_path):
        man = D.save_dataset(tiny_dataset(), tmp_path / "d.json")
        with pytest.raises(D.ContainerSizeError):
            D.load_dataset(man, validate_deap=True)
        doc = json.loads(man.read_text())
        doc.update(synthetic=False, n_trials=1280, n_channels=32, n_samples=8064)
        man.write_text(json.dumps(doc))
        with pytest.raises(D.ContainerSizeError):  # blob far too short
            D.load_dataset(man)

    def test_non_finite(self, tmp_path):
        ds = tiny_dataset()
        ds.trials[0, 0, 0] = np.nan
        man = D.save_dataset(ds, tmp_path / "d.json")
        with pytest.raises(D.NonFiniteSampleError):
            D.load_dataset(man)

    def test_rating_range(self, tmp_path):
        man = D.save_dataset(tiny_dataset(), tmp_path / "d.json")
        doc = json.loads(man.read_text())
        doc["valence"][0] = 11.0
        man.write_text(json.dumps(doc))
        with pytest.raises(D.RatingRangeError):
            D.load_dataset(man)

    def test_bad_manifest(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{not json")
        with pytest.raises(D.ManifestError):
            D.load_dataset(p)
        p.write_text(json.dumps({"format": "other"}))
        with pytest.raises(D.ManifestError):
            D.load_dataset(p)

    def test_errors_distinct(self):
        errs = [D.ContainerSizeError, D.NonFiniteSampleError, D.RatingRangeError, D.ManifestError]
        assert len(set(errs)) == 4 and all(issubclass(e, D.DataError) for e in errs)


def band_power(x, f0, rate=128.0, half_width=1.5):
    freqs = np.fft.rfftfreq(x.shape[-1], 1 / rate)
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    band = (freqs >= f0 - half_width) & (freqs <= f0 + half_width)
    return spec[..., band].sum(-1)


class TestSynthetic:
    def test_deterministic(self):
        a = D.generate_synthetic(6, 3, 512, seed=4)
        b = D.generate_synthetic(6, 3, 512, seed=4)
        assert a.trials.tobytes() == b.trials.tobytes()
        np.testing.assert_array_equal(a.valence, b.valence)

    def test_balanced_classes(self):
        ds = D.generate_synthetic(50, 2, 256, seed=1)
        for problem in D.PROBLEMS:
            assert ds.labels(problem).sum() == 25

    def test_separability_range(self):
        with pytest.raises(ValueError):
            D.generate_synthetic(4, 1, 64, separability=1.5)

    def test_channel_names(self):
        assert D.generate_synthetic(2, 12, 64).channel_names == list(D.REGIONS["FRONT"])
        assert D.generate_synthetic(2, 32, 64).channel_names is not None

    def test_threshold_oracle_large_gap(self):
        params = D.SyntheticParams(base_amplitude=3.0, channel_weight_range=(1.0, 1.0))
        ds = D.generate_synthetic(200, 2, 8064, separability=1.0, seed=2, params=params)
        wins = D.segment_channel(ds.trials, 5)  # (n, C, 12, 672)
        power = band_power(wins, 10.0)
        labels = np.repeat(ds.labels("valence")[:, None], 12, axis=1)
        for c in range(2):
            p = power[:, c]
            thr = np.median(p)
            acc = ((p > thr).astype(int) == labels).mean()
            assert acc >= 0.99

    def test_null_control(self):
        # 2000 independent single-window trials at separability 0
        ds = D.generate_synthetic(2000, 1, 672, separability=0.0, seed=3)
        p = band_power(ds.trials[:, 0], 10.0)
        y = ds.labels("valence")
        fit, held = slice(0, 1000), slice(1000, 2000)
        thr = np.median(p[fit])
        sign = 1 if (y[fit][p[fit] > thr].mean() >= 0.5) else -1
        pred = ((sign * (p[held] - thr)) > 0).astype(int)
        acc = (pred == y[held]).mean()
        assert abs(acc - 0.5) <= 0.03
        # label-permutation oracle: the same classifier on shuffled labels
        perm = np.random.default_rng(0).permutation(y[held])
        assert abs(acc - (pred == perm).mean()) <= 0.06
