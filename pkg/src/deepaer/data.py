"""EEG trial containers, windowing, brain regions, folds and a synthetic generator."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

log = logging.getLogger(__name__)

# Channel order of the DEAP preprocessed recordings.
DEAP_CHANNELS = (
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7",
    "PO3", "O1", "Oz", "Pz", "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz",
    "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
)
DEAP_TRIALS, DEAP_SAMPLES, DEAP_RATE = 1280, 8064, 128.0
TRIAL_SECONDS = 60  # nominal trial duration used to turn window seconds into K

REGIONS = {
    "FRONT": ("Fp1", "AF3", "F3", "F7", "FC1", "FC5", "Fp2", "AF4", "F4", "F8", "FC2", "FC6"),
    "CENT": ("C3", "C4", "CP1", "CP2"),
    "PERI": ("P3", "P7", "Pz", "P4", "P8", "CP5"),
    "OCCIP": ("O1", "PO3", "O2", "PO4"),
}
REGION_NAMES = ("FRONT", "CENT", "PERI", "OCCIP", "ALL")

LOW, HIGH = 0, 1
PROBLEMS = ("valence", "arousal")

CONTAINER_FORMAT = "deepaer-eeg"
CONTAINER_VERSION = 1


class DataError(Exception):
    """Base class for dataset problems."""


class ContainerSizeError(DataError):
    pass


class NonFiniteSampleError(DataError):
    pass


class RatingRangeError(DataError):
    pass


class UnknownChannelError(DataError):
    pass


class ManifestError(DataError):
    pass


@dataclass
class EegDataset:
    trials: np.ndarray  # (n_trials, C, T)
    channel_names: list[str]
    sample_rate: float
    valence: np.ndarray
    arousal: np.ndarray
    subject_ids: np.ndarray
    synthetic: bool = False

    def __post_init__(self):
        n, c, _ = self.trials.shape
        if len(self.channel_names) != c:
            raise ContainerSizeError(f"{len(self.channel_names)} channel names for {c} channels")
        for name in ("valence", "arousal", "subject_ids"):
            if len(getattr(self, name)) != n:
                raise ContainerSizeError(f"{name} has {len(getattr(self, name))} entries for {n} trials")
        for name in ("valence", "arousal"):
            r = np.asarray(getattr(self, name), dtype=float)
            if np.any(~np.isfinite(r)) or r.min() < 1 or r.max() > 9:
                raise RatingRangeError(f"{name} ratings must lie in [1, 9]")

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def n_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def n_samples(self) -> int:
        return self.trials.shape[2]

    def labels(self, problem: str) -> np.ndarray:
        if problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}")
        ratings = self.valence if problem == "valence" else self.arousal
        return np.array([binarize_label(r) for r in ratings], dtype=np.int64)


def binarize_label(rating: float) -> int:
    """Ratings below 5 are Low (0); 5 and above are High (1)."""
    if not 1 <= rating <= 9:
        raise RatingRangeError(f"rating {rating} outside [1, 9]")
    return HIGH if rating >= 5 else LOW


# --------------------------------------------------------------------------
# container
# --------------------------------------------------------------------------

def save_dataset(ds: EegDataset, manifest_path) -> Path:
    """Write ``<name>.json`` manifest plus ``<name>.f32`` little-endian float32 blob."""
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".f32")
    manifest = dict(
        format=CONTAINER_FORMAT, version=CONTAINER_VERSION,
        n_trials=ds.n_trials, n_channels=ds.n_channels, n_samples=ds.n_samples,
        sample_rate=ds.sample_rate, channel_names=list(ds.channel_names),
        valence=[float(v) for v in ds.valence], arousal=[float(v) for v in ds.arousal],
        subject_ids=[int(s) for s in ds.subject_ids],
        dtype="float32", byte_order="little", layout=["trial", "channel", "sample"],
        blob=blob_path.name, synthetic=bool(ds.synthetic),
    )
    np.ascontiguousarray(ds.trials, dtype="<f4").tofile(blob_path)
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path


def load_dataset(manifest_path, validate_deap: bool | None = None) -> EegDataset:
    """Read a manifest + blob container.

    DEAP-shaped counts (1280 trials, 32 channels, 8064 samples) are enforced
    unless the manifest is flagged synthetic or ``validate_deap`` is False.
    """
    manifest_path = Path(manifest_path)
    try:
        man = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as e:
        raise ManifestError(f"cannot read manifest {manifest_path}: {e}") from None
    if man.get("format") != CONTAINER_FORMAT:
        raise ManifestError(f"{manifest_path}: not a {CONTAINER_FORMAT} manifest")
    if man.get("version") != CONTAINER_VERSION:
        raise ManifestError(f"{manifest_path}: unsupported version {man.get('version')}")
    if man.get("dtype") != "float32" or man.get("byte_order") != "little":
        raise ManifestError("only little-endian float32 blobs are supported")
    try:
        n, c, t = int(man["n_trials"]), int(man["n_channels"]), int(man["n_samples"])
        blob_path = manifest_path.parent / man["blob"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"{manifest_path}: missing field {e}") from None
    if validate_deap is None:
        validate_deap = not man.get("synthetic", False)
    if validate_deap and (n, c, t) != (DEAP_TRIALS, len(DEAP_CHANNELS), DEAP_SAMPLES):
        raise ContainerSizeError(
            f"DEAP container must hold {DEAP_TRIALS}x{len(DEAP_CHANNELS)}x{DEAP_SAMPLES}, manifest says {n}x{c}x{t}"
        )
    expected = n * c * t * 4
    try:
        actual = blob_path.stat().st_size
    except OSError as e:
        raise ContainerSizeError(f"blob {blob_path} unreadable: {e}") from None
    if actual != expected:
        raise ContainerSizeError(f"blob {blob_path} is {actual} bytes, manifest implies {expected}")
    trials = np.fromfile(blob_path, dtype="<f4").reshape(n, c, t).astype(np.float32, copy=False)
    if not np.all(np.isfinite(trials)):
        raise NonFiniteSampleError(f"{blob_path} contains non-finite samples")
    return EegDataset(
        trials=trials, channel_names=list(man["channel_names"]), sample_rate=float(man["sample_rate"]),
        valence=np.asarray(man["valence"], float), arousal=np.asarray(man["arousal"], float),
        subject_ids=np.asarray(man.get("subject_ids", np.arange(n) // 40), int),
        synthetic=bool(man.get("synthetic", False)),
    )


# --------------------------------------------------------------------------
# windows
# --------------------------------------------------------------------------

def zscore(x: np.ndarray, axis: int = -1, floor: float = 1e-12) -> np.ndarray:
    """Zero mean, unit population variance along ``axis``; near-constant slices become zeros."""
    x = np.asarray(x)
    if x.shape[axis] < 2:
        raise ValueError("z-score needs at least 2 samples")
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=axis, keepdims=True)
    var = x64.var(axis=axis, keepdims=True)
    flat = var < floor
    out = (x64 - mu) / np.sqrt(np.where(flat, 1.0, var))
    out = np.where(flat, 0.0, out)
    return out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def window_layout(n_samples: int, tw_seconds: int | None = None, window_samples: int | None = None) -> tuple[int, int]:
    """(K, samples per window).

    ``tw_seconds`` divides the nominal 60 s trial into K = 60 / tw windows of
    ``n_samples // K`` samples, so 8064 samples give 12x672, 6x1344 or 4x2016.
    """
    if window_samples is not None:
        w = int(window_samples)
        if w < 1:
            raise ValueError("window_samples must be positive")
    else:
        if tw_seconds is None or tw_seconds <= 0 or TRIAL_SECONDS % tw_seconds:
            raise ValueError(f"window length {tw_seconds!r} s must divide {TRIAL_SECONDS} s")
        w = n_samples // (TRIAL_SECONDS // int(tw_seconds))
    if w > n_samples or w < 1:
        raise ValueError(f"window of {w} samples does not fit a {n_samples}-sample channel")
    return n_samples // w, w


def segment_channel(signal: np.ndarray, tw_seconds: int | None = 5, window_samples: int | None = None) -> np.ndarray:
    """Non-overlapping consecutive windows ``(K, w)``; any trailing remainder is dropped."""
    signal = np.asarray(signal)
    k, w = window_layout(signal.shape[-1], tw_seconds, window_samples)
    return signal[..., :k * w].reshape(*signal.shape[:-1], k, w)


@dataclass
class WindowBatch:
    windows: np.ndarray  # (n, w), z-scored
    labels: np.ndarray
    channel: int
    trial_ids: np.ndarray
    window_idx: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def channel_windows(ds: EegDataset, channel: int, tw_seconds: int | None = 5,
                    window_samples: int | None = None, trials=None) -> np.ndarray:
    """Z-scored windows of one channel for the given trials, shape ``(n_trials, K, w)``."""
    data = ds.trials[:, channel, :] if trials is None else ds.trials[np.asarray(trials), channel, :]
    return zscore(segment_channel(data, tw_seconds, window_samples)).astype(np.float32)


def build_training_windows(ds: EegDataset, plan: "FoldPlan", fold: int, channel: int,
                           tw_seconds: int | None = 5, problem: str = "valence",
                           window_samples: int | None = None,
                           cached: np.ndarray | None = None) -> tuple[WindowBatch, np.ndarray]:
    """Training windows from every fold except ``fold``; returns them with the held-out trial ids.

    ``cached`` may hold the result of :func:`channel_windows` for all trials.
    """
    if not 0 <= fold < plan.k:
        raise ValueError(f"fold {fold} out of range for {plan.k} folds")
    test = plan.folds[fold]
    if len(test) == 0:
        raise ValueError(f"fold {fold} is empty")
    train = plan.train_indices(fold)
    wins = cached[train] if cached is not None else channel_windows(ds, channel, tw_seconds, window_samples, train)
    n_tr, k, w = wins.shape
    labels = ds.labels(problem)[train]
    batch = WindowBatch(
        windows=wins.reshape(n_tr * k, w),
        labels=np.repeat(labels, k),
        channel=channel,
        trial_ids=np.repeat(train, k),
        window_idx=np.tile(np.arange(k), n_tr),
    )
    return batch, test


# --------------------------------------------------------------------------
# regions
# --------------------------------------------------------------------------

def load_region_map(path) -> dict[str, tuple[str, ...]]:
    """JSON object mapping region name to a list of channel names; merged over the defaults."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict) or not all(isinstance(v, list) for v in raw.values()):
        raise ValueError(f"{path}: region map must be an object of name -> channel list")
    merged = dict(REGIONS)
    merged.update({k.upper(): tuple(v) for k, v in raw.items()})
    return merged


def select_region(ds: EegDataset, region: str, region_map: dict | None = None) -> list[int]:
    """Channel indices of a region, in region-list order; ALL is every channel in dataset order."""
    region = region.upper()
    if region == "ALL":
        return list(range(ds.n_channels))
    regions = REGIONS if region_map is None else region_map
    if region not in regions:
        raise ValueError(f"unknown region {region!r}")
    index = {name: i for i, name in enumerate(ds.channel_names)}
    missing = [c for c in regions[region] if c not in index]
    if missing:
        raise UnknownChannelError(f"region {region} names channels absent from the dataset: {missing}")
    return [index[c] for c in regions[region]]


# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------

@dataclass
class FoldPlan:
    folds: list[np.ndarray]
    class_counts: np.ndarray  # (k, n_classes)

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))


def make_folds(labels, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified k-fold partition of trial indices.

    Members of each class are shuffled and dealt round-robin, continuing the
    deal across classes, so fold sizes and per-class fold counts each differ
    by at most one.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n < k:
        raise ValueError(f"{n} trials cannot fill {k} folds")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("both classes must be present")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF01D]))
    assignment = np.empty(n, dtype=np.int64)
    pos = 0
    for c in classes:
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            warnings.warn(f"class {c} has {len(members)} trials, fewer than {k} folds", stacklevel=2)
        members = rng.permutation(members)
        assignment[members] = (pos + np.arange(len(members))) % k
        pos += len(members)
    folds = [np.flatnonzero(assignment == f) for f in range(k)]
    counts = np.array([[int((labels[f] == c).sum()) for c in classes] for f in folds])
    return FoldPlan(folds, counts)


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

def default_channel_names(n_channels: int) -> list[str]:
    """Region channels first (FRONT, CENT, PERI, OCCIP), then the rest of the DEAP montage.

    32 channels give the DEAP order; 12 give exactly the FRONT region.
    """
    if n_channels == len(DEAP_CHANNELS):
        return list(DEAP_CHANNELS)
    ordered = [c for r in ("FRONT", "CENT", "PERI", "OCCIP") for c in REGIONS[r]]
    ordered += [c for c in DEAP_CHANNELS if c not in ordered]
    if n_channels <= len(ordered):
        return ordered[:n_channels]
    return ordered + [f"X{i}" for i in range(n_channels - len(ordered))]


@dataclass
class SyntheticParams:
    """Knobs of the synthetic generator (see :func:`generate_synthetic`)."""

    valence_freq: float = 10.0
    arousal_freq: float = 20.0
    base_amplitude: float = 1.0
    max_contrast: float = 0.9
    noise_ar: float = 0.7
    freq_jitter: float = 1.0
    channel_weight_range: tuple[float, float] = (0.35, 1.0)


def _balanced_ratings(rng: np.random.Generator, n: int) -> np.ndarray:
    # half the trials (rounded down) Low in [1, 5), the rest High in [5, 9]
    high = rng.permutation(np.arange(n) >= n // 2)
    return np.where(high, rng.uniform(5, 9, n), rng.uniform(1, 5, n))


def generate_synthetic(n_trials: int = 200, n_channels: int = 12, n_samples: int = DEAP_SAMPLES,
                       separability: float = 1.0, seed: int = 0, sample_rate: float = DEAP_RATE,
                       params: SyntheticParams | None = None) -> EegDataset:
    """Labelled multi-channel trials with class-dependent rhythms buried in coloured noise.

    Each channel carries a valence rhythm (around 10 Hz) and an arousal rhythm
    (around 20 Hz). The rhythm amplitude is ``base * (1 +/- separability * w_c * contrast)``
    with the sign given by the High/Low label and ``w_c`` a per-channel weight,
    so channels differ in how informative they are. At separability 0 the
    signals carry no label information. Ratings are drawn so both classes
    are equally frequent in each dimension.
    """
    if not 0 <= separability <= 1:
        raise ValueError("separability must lie in [0, 1]")
    p = params or SyntheticParams()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    valence = _balanced_ratings(rng, n_trials)
    arousal = _balanced_ratings(rng, n_trials)
    lo, hi = p.channel_weight_range
    weights = {"valence": rng.uniform(lo, hi, n_channels), "arousal": rng.uniform(lo, hi, n_channels)}
    t = np.arange(n_samples) / sample_rate

    white = rng.standard_normal((n_trials, n_channels, n_samples))
    noise = lfilter([np.sqrt(1 - p.noise_ar ** 2)], [1, -p.noise_ar], white, axis=-1)
    signal = noise
    for problem, ratings, f0 in (("valence", valence, p.valence_freq), ("arousal", arousal, p.arousal_freq)):
        sign = np.where(ratings >= 5, 1.0, -1.0)[:, None]
        amp = p.base_amplitude * (1 + separability * p.max_contrast * sign * weights[problem][None, :])
        freq = f0 + rng.uniform(-p.freq_jitter, p.freq_jitter, (n_trials, n_channels))
        phase = rng.uniform(0, 2 * np.pi, (n_trials, n_channels))
        signal = signal + amp[..., None] * np.sin(2 * np.pi * freq[..., None] * t + phase[..., None])
    return EegDataset(
        trials=signal.astype(np.float32),
        channel_names=default_channel_names(n_channels),
        sample_rate=float(sample_rate),
        valence=valence, arousal=arousal,
        subject_ids=np.arange(n_trials) // 40,
        synthetic=True,
    )
