"""Short-time Fourier transform with exact weighted overlap-add inversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..audio import AudioClip


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 1024
    hop: int = 512
    fft_size: int = 1024

    def __post_init__(self):
        if self.window_length <= 0 or self.window_length % 2:
            raise ValueError("window_length must be a positive even number")
        if self.hop != self.window_length // 2:
            raise ValueError(
                f"hop must be window_length/2 (= {self.window_length // 2}) "
                f"for overlap-add, got {self.hop}")
        if self.fft_size < self.window_length:
            raise ValueError("fft_size must be >= window_length")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann: sums to one at 50% overlap
        n = np.arange(self.window_length)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_length)


@dataclass
class ComplexSpectrogram:
    values: np.ndarray  # (n_bins, n_frames), complex
    config: StftConfig
    sample_rate: int
    length: int  # number of signal samples analysed

    @property
    def shape(self):
        return self.values.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def with_values(self, values) -> "ComplexSpectrogram":
        values = np.asarray(values)
        if values.shape != self.values.shape:
            raise ValueError(f"grid mismatch: {values.shape} vs {self.values.shape}")
        return ComplexSpectrogram(values, self.config, self.sample_rate, self.length)


def stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    x = clip.samples
    pad = cfg.window_length // 2
    if len(x) <= pad:
        raise ValueError(
            f"clip of {len(x)} samples is too short for window {cfg.window_length}")
    xp = np.pad(x, pad, mode="reflect")
    n_frames = (len(xp) - cfg.window_length) // cfg.hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.window_length)[::cfg.hop]
    frames = frames[:n_frames] * cfg.window()
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1).T
    return ComplexSpectrogram(spec, cfg, clip.sample_rate, len(x))


def istft(spec: ComplexSpectrogram) -> AudioClip:
    cfg = spec.config
    win = cfg.window()
    pad = cfg.window_length // 2
    n_frames = spec.values.shape[1]
    frames = np.fft.irfft(spec.values.T, n=cfg.fft_size, axis=1)[:, :cfg.window_length]
    total = (n_frames - 1) * cfg.hop + cfg.window_length
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win * win
    for i in range(n_frames):
        start = i * cfg.hop
        out[start:start + cfg.window_length] += frames[i] * win
        norm[start:start + cfg.window_length] += wsq
    covered = norm > 1e-10
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    out = out[pad:pad + spec.length]
    if len(out) < spec.length:
        out = np.pad(out, (0, spec.length - len(out)))
    return AudioClip(out, spec.sample_rate)
