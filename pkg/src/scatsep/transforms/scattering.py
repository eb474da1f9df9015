"""Scattering pyramid: wavelet modulus layers subsampled at their critical rates.

Layer 1 filters the signal with the constant-Q bank and keeps the modulus of
each band (the low-pass branch stays signed).  Every further layer filters
each node of the previous layer with a dyadic (Q=1) Morlet bank, doubles the
stride and applies the modulus on band-pass branches only while the node has
gone through fewer than ``m_max`` modulus operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio import AudioClip
from .filterbank import MorletBank, WaveletFilterBank, design_dyadic_bank

LOWPASS = -1
DEFAULT_M_MAX = 2
# octaves of the dyadic bank applied to every node above layer 1
DEFAULT_LAYER2_OCTAVES = 11


@dataclass
class FeatureMap:
    """Real matrix of ``bins x frames`` sampled every ``stride`` samples.

    Non-negative unless ``signed`` is set (Haar features keep their sign).
    """

    values: np.ndarray
    stride: int
    level: int
    bin_labels: list = field(default_factory=list)
    sample_rate: int = 16000
    signed: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got {self.values.shape}")
        if self.stride <= 0:
            raise ValueError("stride must be positive")
        if not self.signed and np.any(self.values < 0):
            raise ValueError("feature map has negative values")
        if not self.bin_labels:
            self.bin_labels = [str(i) for i in range(self.values.shape[0])]
        if len(self.bin_labels) != self.values.shape[0]:
            raise ValueError("bin_labels must match the number of rows")

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def descriptor(self) -> dict:
        return {"level": self.level, "stride": self.stride, "rows": self.n_bins,
                "sample_rate": self.sample_rate}

    def with_values(self, values) -> "FeatureMap":
        return FeatureMap(values, self.stride, self.level, list(self.bin_labels),
                          self.sample_rate, self.signed)


@dataclass
class ScatteringLayer:
    """All nodes of one pyramid layer, stacked row-wise.

    ``paths[i]`` lists the filter indices traversed by row ``i`` (``-1`` is
    a low-pass), ``n_modulus[i]`` counts the modulus operations applied.
    ``n_samples`` is the length of the analysed signal; frame ``k`` stands
    for samples ``[k * stride, (k + 1) * stride)`` of it.
    """

    values: np.ndarray
    paths: list
    n_modulus: np.ndarray
    stride: int
    level: int
    sample_rate: int
    labels: list
    n_samples: int | None = None

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def feature_map(self) -> FeatureMap:
        """Non-negative features for factorization (signed rows are rectified)."""
        return FeatureMap(np.abs(self.values), self.stride, self.level,
                          list(self.labels), self.sample_rate)

    def frame_weights(self) -> np.ndarray:
        """Number of signal samples represented by each frame."""
        n = self.n_samples if self.n_samples is not None else self.n_frames * self.stride
        start = np.arange(self.n_frames) * self.stride
        return np.clip(n - start, 0, self.stride).astype(np.float64)

    def energy(self) -> float:
        """Squared norm of the layer, each frame weighted by the samples it covers."""
        return float(np.sum(self.values ** 2 * self.frame_weights()))


def layer_distance(a: ScatteringLayer, b: ScatteringLayer) -> float:
    """Euclidean distance between two layers on the same grid.

    Frames are weighted by the number of signal samples they cover, so the
    value is comparable with the Euclidean distance of the signals.
    """
    if a.values.shape != b.values.shape or a.stride != b.stride:
        raise ValueError("layers are on different grids")
    diff = (a.values - b.values) ** 2
    return float(np.sqrt(np.sum(diff * a.frame_weights())))


@dataclass
class ScatteringPyramid:
    layers: list
    m_max: int = DEFAULT_M_MAX

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __getitem__(self, k: int) -> ScatteringLayer:
        """Layer ``k`` (1-based, as in ``|W^k|``)."""
        if not 1 <= k <= len(self.layers):
            raise IndexError(f"pyramid has layers 1..{len(self.layers)}")
        return self.layers[k - 1]

    def feature_maps(self) -> list:
        return [layer.feature_map() for layer in self.layers]


def _band_labels(fb: WaveletFilterBank) -> list:
    hz = fb.center_frequencies_hz()
    return ["phi"] + [f"{f:.1f}Hz" for f in hz]


def scatter_layer1(clip: AudioClip, fb: WaveletFilterBank) -> ScatteringLayer:
    """``{x * phi_1, |x * psi_lambda|}`` subsampled at the critical stride."""
    if fb.sample_rate is not None and clip.sample_rate != fb.sample_rate:
        raise ValueError(
            f"clip at {clip.sample_rate} Hz, filter bank designed for {fb.sample_rate} Hz")
    subbands, low = fb.analysis(clip.samples)
    values = np.vstack([low[None, :], np.abs(subbands)])
    paths = [(LOWPASS,)] + [(j,) for j in range(fb.n_bands)]
    n_mod = np.array([0] + [1] * fb.n_bands)
    return ScatteringLayer(values, paths, n_mod, fb.stride, 1, clip.sample_rate,
                           _band_labels(fb), len(clip))


def _child_label(parent: str, idx: int) -> str:
    return f"{parent}>{'phi' if idx == LOWPASS else f'psi{idx}'}"


def scatter_layer2(layer: ScatteringLayer, bank: MorletBank | None = None,
                   m_max: int = DEFAULT_M_MAX) -> ScatteringLayer:
    """Refine every node with the dyadic bank at twice the stride.

    Each node yields its low-pass child (no modulus) followed by the moduli
    of its band-pass children; band-pass children are dropped when the
    parent already went through ``m_max`` modulus operations.
    """
    bank = bank or design_dyadic_bank(DEFAULT_LAYER2_OCTAVES)
    if layer.n_frames < bank.stride:
        raise ValueError("not enough frames left for another layer")
    subbands, low = bank.analysis(layer.values)
    rows, paths, n_mod, labels = [], [], [], []
    for i in range(layer.n_nodes):
        rows.append(low[i])
        paths.append(layer.paths[i] + (LOWPASS,))
        n_mod.append(layer.n_modulus[i])
        labels.append(_child_label(layer.labels[i], LOWPASS))
        if layer.n_modulus[i] >= m_max:
            continue
        for j in range(bank.n_bands):
            rows.append(np.abs(subbands[j, i]))
            paths.append(layer.paths[i] + (j,))
            n_mod.append(layer.n_modulus[i] + 1)
            labels.append(_child_label(layer.labels[i], j))
    return ScatteringLayer(np.array(rows), paths, np.array(n_mod),
                           layer.stride * bank.stride, layer.level + 1,
                           layer.sample_rate, labels, layer.n_samples)


def scatter_pyramid(clip: AudioClip, fb: WaveletFilterBank, depth: int = 2,
                    m_max: int = DEFAULT_M_MAX,
                    bank: MorletBank | None = None) -> ScatteringPyramid:
    """Layers ``1..depth``; layer ``k`` has stride ``2**(k-1) * fb.stride``."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    layers = [scatter_layer1(clip, fb)]
    for _ in range(depth - 1):
        if layers[-1].n_frames < 2:
            raise ValueError(
                f"depth {depth} too large: layer {len(layers)} has "
                f"{layers[-1].n_frames} frame(s)")
        layers.append(scatter_layer2(layers[-1], bank, m_max))
    return ScatteringPyramid(layers, m_max)


def haar_features(layer1: ScatteringLayer, J2: int = 5) -> FeatureMap:
    """Haar analysis of every band envelope at scales ``2**0 .. 2**J2``.

    Scale ``2**0`` is the envelope itself; scale ``2**k`` (k >= 1) is the
    difference between the means over the ``2**(k-1)`` frames starting at
    ``n`` and the ``2**(k-1)`` frames before ``n``.  Outputs are signed.
    Rows are ordered band-major: ``(band0, k=0..J2), (band1, ...), ...``.
    """
    if J2 < 0:
        raise ValueError("J2 must be >= 0")
    bands = [i for i, p in enumerate(layer1.paths) if p[-1] != LOWPASS]
    env = layer1.values[bands]
    n = env.shape[1]
    out = np.empty((len(bands), J2 + 1, n))
    out[:, 0] = env
    for k in range(1, J2 + 1):
        h = 2 ** (k - 1)
        padded = np.pad(env, [(0, 0), (h, h)], mode="reflect" if n > 1 else "edge")
        csum = np.concatenate([np.zeros((len(bands), 1)), np.cumsum(padded, axis=1)], axis=1)
        t = np.arange(n) + h
        later = csum[:, t + h] - csum[:, t]
        earlier = csum[:, t] - csum[:, t - h]
        out[:, k] = (later - earlier) / h
    labels = [f"{layer1.labels[b]}|haar{k}" for b in bands for k in range(J2 + 1)]
    return FeatureMap(out.reshape(len(bands) * (J2 + 1), n), layer1.stride, 1, labels,
                      layer1.sample_rate, signed=True)
