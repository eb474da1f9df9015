"""From per-source feature estimates back to waveforms.

Two routes: soft masks applied to the mixture STFT, and a greedy top-down
inversion of scattering estimates that reuses the phases of ``W1 y`` and
``W2 |W1 y|``.  Both return estimates whose sum is the mixture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import AudioClip
from .transforms.filterbank import MorletBank, WaveletFilterBank, design_dyadic_bank
from .transforms.scattering import (DEFAULT_LAYER2_OCTAVES, DEFAULT_M_MAX, LOWPASS,
                                    FeatureMap, ScatteringLayer, scatter_layer1)
from .transforms.stft import StftConfig, istft, stft

DEFAULT_MASK_EXPONENT = 2.0


@dataclass
class MaskPair:
    """Complementary soft masks: ``m1 + m2 = 1`` elementwise."""

    m1: np.ndarray
    m2: np.ndarray
    p: float = DEFAULT_MASK_EXPONENT

    @property
    def shape(self):
        return self.m1.shape

    @classmethod
    def from_first(cls, m1, p: float = DEFAULT_MASK_EXPONENT) -> "MaskPair":
        m1 = np.clip(np.asarray(m1, dtype=np.float64), 0.0, 1.0)
        return cls(m1, 1.0 - m1, p)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, FeatureMap) else np.asarray(f, dtype=np.float64)


def soft_mask(est1, est2, p: float = DEFAULT_MASK_EXPONENT) -> MaskPair:
    """Ratio masks ``est_i**p / (est_1**p + est_2**p)``.

    Both estimates are divided by their elementwise maximum first, so the
    masks sum to one even for vanishing magnitudes; bins where both
    estimates are zero get 0.5 / 0.5.
    """
    a, b = np.abs(_values(est1)), np.abs(_values(est2))
    if a.shape != b.shape:
        raise ValueError(f"estimate shapes differ: {a.shape} vs {b.shape}")
    if not p > 0:
        raise ValueError("mask exponent p must be positive")
    top = np.maximum(a, b)
    live = top > 0
    safe = np.where(live, top, 1.0)
    ap, bp = (a / safe) ** p, (b / safe) ** p
    m1 = np.where(live, ap / np.maximum(ap + bp, 1e-12), 0.5)
    m2 = np.where(live, bp / np.maximum(ap + bp, 1e-12), 0.5)
    return MaskPair(m1, m2, p)


def mask_and_invert(y: AudioClip, masks: MaskPair, cfg: StftConfig = StftConfig()):
    """Filter the mixture STFT with each mask and invert by overlap-add."""
    spec = stft(y, cfg)
    if masks.shape != spec.shape:
        raise ValueError(f"masks on grid {masks.shape}, mixture STFT is {spec.shape}")
    x1 = istft(spec.with_values(masks.m1 * spec.values))
    x2 = istft(spec.with_values(masks.m2 * spec.values))
    return x1, x2


def upsample_frames(values: np.ndarray, factor: int, n_out: int) -> np.ndarray:
    """Linear interpolation from frames at ``k * factor`` to ``0..n_out-1``.

    Values beyond the last frame are held constant.
    """
    values = np.asarray(values, dtype=np.float64)
    n_in = values.shape[-1]
    pos = np.arange(n_out) / factor
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    w = np.clip(pos - lo, 0.0, 1.0)
    return values[..., lo] * (1.0 - w) + values[..., hi] * w


def _split_level1(layer: ScatteringLayer):
    low = [i for i, p in enumerate(layer.paths) if p[-1] == LOWPASS]
    bands = [i for i, p in enumerate(layer.paths) if p[-1] != LOWPASS]
    return low[0], bands


def invert_layer1_masks(y: AudioClip, masks: MaskPair, fb: WaveletFilterBank,
                        layer1: ScatteringLayer | None = None):
    """Apply layer-1 grid masks to the full-rate subbands of ``y`` and resynthesize.

    Masks are interpolated to the sample rate, the canonical dual frame maps
    the masked subbands back to time, and the residual ``y - x1 - x2`` is
    split frame by frame according to the mask-weighted subband energy of
    ``y``.  The result satisfies ``x1 + x2 = y`` to rounding.
    """
    layer1 = layer1 if layer1 is not None else scatter_layer1(y, fb)
    if masks.shape != layer1.values.shape:
        raise ValueError(
            f"masks on grid {masks.shape}, layer-1 features are {layer1.values.shape}")
    lp_row, band_rows = _split_level1(layer1)
    n = len(y)
    stride = layer1.stride
    m1 = upsample_frames(masks.m1, stride, n)
    full_band = np.stack([m1[band_rows], 1.0 - m1[band_rows]])
    full_low = np.stack([m1[lp_row], 1.0 - m1[lp_row]])
    est = fb.masked_synthesis(y.samples, full_band, full_low)

    energy = layer1.values ** 2
    total = energy.sum(axis=0)
    w1 = np.where(total > 0, (masks.m1 * energy).sum(axis=0) / np.where(total > 0, total, 1.0),
                  0.5)
    w1 = upsample_frames(w1, stride, n)
    resid = y.samples - est[0] - est[1]
    x1 = est[0] + w1 * resid
    x2 = y.samples - x1
    return y.with_samples(x1), y.with_samples(x2)


def fold_level2(layer1: ScatteringLayer, est2: tuple, p: float = DEFAULT_MASK_EXPONENT,
                bank: MorletBank | None = None, m_max: int = DEFAULT_M_MAX) -> tuple:
    """Level-1 envelope estimates from level-2 estimates.

    The layer-1 envelopes of the mixture are decomposed with the dyadic bank
    at full layer-1 rate; each child is weighted by the (interpolated)
    level-2 soft mask of its path and the envelopes are resynthesised,
    keeping the phases of ``W2 |W1 y|``.
    """
    bank = bank or design_dyadic_bank(DEFAULT_LAYER2_OCTAVES)
    m2 = soft_mask(est2[0], est2[1], p)
    n1 = layer1.n_frames
    parents = {path: i for i, path in enumerate(layer1.paths)}
    n_nodes = layer1.n_nodes
    band_masks = np.ones((2, n_nodes, bank.n_bands, n1))
    low_masks = np.ones((2, n_nodes, n1))
    seen = np.zeros((n_nodes, bank.n_bands + 1), dtype=bool)
    paths = _level2_paths(layer1, bank, m2.shape[0], m_max)
    up1 = upsample_frames(m2.m1, bank.stride, n1)
    for row, (parent, child) in enumerate(paths):
        i = parents[parent]
        if child == LOWPASS:
            low_masks[0, i], low_masks[1, i] = up1[row], 1.0 - up1[row]
            seen[i, -1] = True
        else:
            band_masks[0, i, child], band_masks[1, i, child] = up1[row], 1.0 - up1[row]
            seen[i, child] = True
    # children pruned by m_max inherit their parent's low-pass mask
    for i in range(n_nodes):
        for j in np.flatnonzero(~seen[i, :-1]):
            band_masks[:, i, j] = low_masks[:, i]

    out = np.empty((2, n_nodes, n1))
    for i in range(n_nodes):
        out[:, i] = bank.masked_synthesis(layer1.values[i], band_masks[:, i], low_masks[:, i])
    lp_row, _ = _split_level1(layer1)
    out[:, lp_row] = np.abs(out[:, lp_row])
    return tuple(np.maximum(out[s], 0.0) for s in range(2))


def _level2_paths(layer1: ScatteringLayer, bank: MorletBank, n_rows: int, m_max: int):
    # row order produced by scatter_layer2
    paths = []
    for i, parent in enumerate(layer1.paths):
        paths.append((parent, LOWPASS))
        if layer1.n_modulus[i] < m_max:
            paths.extend((parent, j) for j in range(bank.n_bands))
    if len(paths) != n_rows:
        raise ValueError(
            f"level-2 estimates have {n_rows} rows, expected {len(paths)} for this bank")
    return paths


def greedy_scatt_inversion(y: AudioClip, estimates: Sequence, fb: WaveletFilterBank,
                           p: float = DEFAULT_MASK_EXPONENT,
                           bank: MorletBank | None = None):
    """Greedy phase recovery from scattering estimates.

    Parameters
    ----------
    y : AudioClip
        Mixture.
    estimates : sequence of (FeatureMap, FeatureMap)
        ``estimates[0]`` are the level-1 estimates of both sources;
        ``estimates[1]``, if present, the level-2 estimates.
    fb : WaveletFilterBank
        Layer-1 bank used to compute the estimates.
    p : float
        Mask exponent for the level-2 masks (level-1 masks always use
        squared magnitudes).

    Returns
    -------
    x1, x2 : AudioClip
        Source estimates with ``x1 + x2 = y``.
    """
    if not estimates:
        raise ValueError("level-1 estimates are required")
    lower, upper = fb.frame_bounds()
    if upper > 1.05 or lower <= 0:
        raise ValueError(f"filter bank frame bounds ({lower:.3g}, {upper:.3g}) are unusable")
    layer1 = scatter_layer1(y, fb)
    e1, e2 = (np.abs(_values(e)) for e in estimates[0])
    if e1.shape != layer1.values.shape or e2.shape != layer1.values.shape:
        raise ValueError(
            f"level-1 estimates must have shape {layer1.values.shape}, got {e1.shape}")
    if len(estimates) > 1:
        f1, f2 = fold_level2(layer1, estimates[1], p, bank)
        e1, e2 = 0.5 * (e1 + f1), 0.5 * (e2 + f2)
    masks = soft_mask(e1, e2, p=2.0)
    return invert_layer1_masks(y, masks, fb, layer1)
