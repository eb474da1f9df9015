"""Mono audio clips, WAV I/O, resampling, 0 dB mixing and dataset manifests."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.io.wavfile
import scipy.signal

# Kaiser design target for the anti-aliasing filter (dB of stop-band attenuation).
_RESAMPLE_ATTENUATION_DB = 80.0
_RESAMPLE_TAPS_PER_PHASE = 64

SOURCE_LABELS = ("source1", "source2")
SPLITS = ("train", "test")


class AudioError(ValueError):
    """Raised for unreadable, unsupported or degenerate audio."""


@dataclass(frozen=True)
class AudioClip:
    """A mono signal with its sample rate.

    Samples are float64 in nominal range [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("samples contain NaN or Inf")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file as a mono clip.

    Stereo (or any multichannel) input is averaged across channels.
    Integer samples are scaled by 1/32768.
    """
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError as exc:
        raise AudioError(f"{path}: no such file") from exc
    except (ValueError, OSError) as exc:
        raise AudioError(f"{path}: unreadable WAV ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample encoding {data.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.shape[0] == 0:
        raise AudioError(f"{path}: zero-length audio")
    return AudioClip(samples, rate)


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as a mono float32 WAV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))


def _antialias_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    n_taps = _RESAMPLE_TAPS_PER_PHASE * max_rate + 1
    beta = scipy.signal.kaiser_beta(_RESAMPLE_ATTENUATION_DB)
    # transition band ends at the lower Nyquist frequency
    width = (_RESAMPLE_ATTENUATION_DB - 7.95) / (2.285 * (n_taps - 1) * np.pi)
    cutoff = 1.0 / max_rate - width / 2
    return scipy.signal.firwin(n_taps, cutoff, window=("kaiser", beta))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited rational resampling with a Kaiser-windowed sinc."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise AudioError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    ratio = Fraction(target_rate, clip.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    h = _antialias_filter(up, down)
    out = scipy.signal.resample_poly(clip.samples, up, down, window=h)
    return AudioClip(out, target_rate)


def mix_at_0db(x1: AudioClip, x2: AudioClip):
    """Mix two clips at equal RMS.

    Both clips are truncated to the shorter length and ``x2`` is rescaled
    so that its RMS matches ``x1``.  Returns ``(y, x1s, x2s)`` with
    ``y = x1s + x2s``.
    """
    if x1.sample_rate != x2.sample_rate:
        raise AudioError(
            f"sample rates differ: {x1.sample_rate} vs {x2.sample_rate}")
    n = min(len(x1), len(x2))
    s1 = x1.samples[:n]
    s2 = x2.samples[:n]
    r1, r2 = rms(s1), rms(s2)
    if r1 == 0.0 or r2 == 0.0:
        raise AudioError("cannot mix at 0 dB: a clip is silent")
    s2 = s2 * (r1 / r2)
    y = s1 + s2
    rate = x1.sample_rate
    return AudioClip(y, rate), AudioClip(s1.copy(), rate), AudioClip(s2, rate)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str
    split: str


class DatasetManifest:
    """List of ``(path, label, split)`` records for two source classes.

    The on-disk format is one ``path,label,split`` record per line.
    Relative paths are resolved against the manifest's directory.
    """

    def __init__(self, entries: Iterable[ManifestEntry]):
        self.entries = list(entries)
        labels = {e.label for e in self.entries}
        if not labels <= set(SOURCE_LABELS):
            raise ValueError(f"unknown labels {sorted(labels - set(SOURCE_LABELS))}")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for {e.path}")

    @classmethod
    def load(cls, path, check_exists=True) -> "DatasetManifest":
        path = Path(path)
        root = path.parent
        entries = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}:{lineno}: expected path,label,split")
                clip_path, label, split = (field.strip() for field in row)
                clip_path = Path(clip_path)
                if not clip_path.is_absolute():
                    clip_path = root / clip_path
                if check_exists and not clip_path.exists():
                    raise FileNotFoundError(f"{path}:{lineno}: {clip_path} does not exist")
                entries.append(ManifestEntry(clip_path, label, split))
        return cls(entries)

    def save(self, path) -> None:
        path = Path(path)
        root = path.parent.resolve()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for e in self.entries:
                p = Path(e.path)
                try:
                    p = p.resolve().relative_to(root)
                except ValueError:
                    pass
                writer.writerow([p.as_posix(), e.label, e.split])

    def select(self, label: str, split: str) -> list[Path]:
        return [e.path for e in self.entries if e.label == label and e.split == split]

    def require_both_sources(self, split: str) -> None:
        for label in SOURCE_LABELS:
            if not self.select(label, split):
                raise ValueError(f"manifest has no {split} clips for {label}")


def mixture_pairs(paths1, paths2, cap=None, seed=0):
    """Cross product of two clip lists, optionally seeded subsampling to ``cap``."""
    pairs = [(a, b) for a in paths1 for b in paths2]
    if cap is not None and len(pairs) > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(pairs), size=cap, replace=False))
        pairs = [pairs[i] for i in keep]
    return pairs
