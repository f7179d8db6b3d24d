"""Per-channel lightweight pyramidal 1D CNNs fused by two-level majority vote
for EEG valence/arousal classification."""

__version__ = "0.1.0"
