"""Synthetic two-class source datasets for end-to-end checks.

Each clip is band-limited Gaussian noise with a sinusoidal amplitude
modulation.  ``bands`` uses disjoint frequency bands and distinct
modulation rates per class; ``modulation`` uses one common band, so the
classes differ only in their modulation rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, DatasetManifest, ManifestEntry, save_wav


@dataclass(frozen=True)
class SourceClass:
    band: tuple  # Hz
    am_rate: float  # Hz
    am_depth: float = 0.9


TOY_DATASETS = {
    "bands": (SourceClass((300.0, 1200.0), 4.0), SourceClass((2000.0, 5000.0), 24.0)),
    "modulation": (SourceClass((500.0, 3000.0), 3.0), SourceClass((500.0, 3000.0), 30.0)),
}


def band_noise(n: int, band, sample_rate: int, rng) -> np.ndarray:
    """Unit-RMS Gaussian noise restricted to ``band`` (Hz) by FFT masking."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x * x))


def toy_clip(cls: SourceClass, duration: float, sample_rate: int, rng) -> AudioClip:
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    # small rate jitter so clips of one class are not identical
    rate = cls.am_rate * rng.uniform(0.9, 1.1)
    env = 1.0 + cls.am_depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    x = band_noise(n, cls.band, sample_rate, rng) * env
    return AudioClip(0.1 * x / np.sqrt(np.mean(x * x)), sample_rate)


def write_toy_dataset(root, kind: str = "bands", n_train: int = 4, n_test: int = 2,
                      duration: float = 2.0, sample_rate: int = 16000,
                      seed: int = 0) -> Path:
    """Write WAV clips of both classes and a ``manifest.csv``; returns its path."""
    if kind not in TOY_DATASETS:
        raise ValueError(f"unknown toy dataset {kind!r}; choose from {sorted(TOY_DATASETS)}")
    root = Path(root)
    rng = np.random.default_rng(seed)
    entries = []
    for label, cls in zip(("source1", "source2"), TOY_DATASETS[kind]):
        for split, count in (("train", n_train), ("test", n_test)):
            for i in range(count):
                path = root / label / f"{split}_{i:03d}.wav"
                save_wav(path, toy_clip(cls, duration, sample_rate, rng))
                entries.append(ManifestEntry(path, label, split))
    manifest = DatasetManifest(entries)
    out = root / "manifest.csv"
    manifest.save(out)
    return out
