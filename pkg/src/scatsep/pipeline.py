"""End-to-end recipes: features, NMF and neural training, separation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, load_wav, mix_at_0db, mixture_pairs, resample
from .neural import (ARCHS, TrainConfig, TrainResult, build_network, make_example,
                     predict_masks)
from .neural import train as train_network
from .nmf import InferenceConfig, nmf_infer_multires, nmf_train, reconstruct_sources
from .phase import greedy_scatt_inversion, invert_layer1_masks, mask_and_invert, soft_mask
from .transforms.filterbank import design_filterbank
from .transforms.scattering import (FeatureMap, haar_features, scatter_layer1,
                                    scatter_pyramid)
from .transforms.stft import StftConfig, stft

FEATURE_MODES = ("stft", "scatt1", "scatt2", "haar")
NMF_MODES = ("stft", "scatt1", "scatt2")


@dataclass(frozen=True)
class FeatureSettings:
    mode: str = "scatt1"
    Q: int = 32
    J1: int = 5
    J2: int = 5
    window: int = 1024
    hop: int = 512
    sample_rate: int = 16000

    def __post_init__(self):
        if self.mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {self.mode!r}; choose from {FEATURE_MODES}")

    @property
    def stft_config(self) -> StftConfig:
        return StftConfig(self.window, self.hop, self.window)

    def filterbank(self):
        return design_filterbank(self.Q, self.J1, self.sample_rate)

    @property
    def n_levels(self) -> int:
        return 2 if self.mode == "scatt2" else 1


@dataclass(frozen=True)
class NmfSettings:
    q: int = 400
    q2: int = 1000
    sparsity: float = 0.1
    max_iters: int = 200
    infer_iters: int = 100
    rel_tol: float = 1e-5
    mask_exponent: float = 2.0
    seed: int = 0

    def train_config(self) -> InferenceConfig:
        return InferenceConfig(max_iters=self.max_iters, rel_tol=self.rel_tol)

    def infer_config(self) -> InferenceConfig:
        return InferenceConfig(max_iters=self.infer_iters, rel_tol=self.rel_tol)

    def atoms(self, level: int) -> int:
        return self.q if level == 1 else self.q2


def prepare_clip(clip: AudioClip, settings: FeatureSettings) -> AudioClip:
    if clip.sample_rate != settings.sample_rate:
        clip = resample(clip, settings.sample_rate)
    return clip


def extract_features(clip: AudioClip, settings: FeatureSettings) -> list:
    """Feature maps of every level used by ``settings.mode``."""
    clip = prepare_clip(clip, settings)
    if settings.mode == "stft":
        cfg = settings.stft_config
        spec = stft(clip, cfg)
        hz = np.arange(cfg.n_bins) * clip.sample_rate / cfg.fft_size
        return [FeatureMap(spec.magnitude(), cfg.hop, 1, [f"{f:.1f}Hz" for f in hz],
                           clip.sample_rate)]
    fb = settings.filterbank()
    if settings.mode == "haar":
        return [haar_features(scatter_layer1(clip, fb), settings.J2)]
    pyramid = scatter_pyramid(clip, fb, settings.n_levels)
    return pyramid.feature_maps()


def training_mixtures(paths1, paths2, settings: FeatureSettings, cap=None, seed=0):
    """0 dB mixtures ``(y, x1, x2)`` from the cross product of two clip lists."""
    out = []
    for p1, p2 in mixture_pairs(paths1, paths2, cap, seed):
        a = prepare_clip(load_wav(p1), settings)
        b = prepare_clip(load_wav(p2), settings)
        out.append(mix_at_0db(a, b))
    return out


# ---- NMF ------------------------------------------------------------------


def train_nmf_models(clips1, clips2, fs: FeatureSettings, ns: NmfSettings,
                     return_history=False):
    """One model pair per feature level, trained on isolated source clips."""
    if fs.mode not in NMF_MODES:
        raise ValueError(f"NMF needs non-negative features; mode {fs.mode!r} is signed")
    if not clips1 or not clips2:
        raise ValueError("both sources need training clips")
    feats = [[extract_features(c, fs) for c in clips] for clips in (clips1, clips2)]
    models, histories = [], []
    for level in range(fs.n_levels):
        pair, hist = [], []
        for src in range(2):
            maps = [f[level] for f in feats[src]]
            model, h = nmf_train(maps, ns.atoms(level + 1), ns.sparsity, ns.train_config(),
                                 seed=ns.seed + 7919 * src + 104729 * level,
                                 return_history=True)
            pair.append(model)
            hist.append(h)
        models.append(tuple(pair))
        histories.append(tuple(hist))
    return (models, histories) if return_history else models


def separate_nmf(y: AudioClip, models, fs: FeatureSettings, ns: NmfSettings):
    """Joint NMF inference followed by phase recovery; ``x1 + x2 = y``."""
    y = prepare_clip(y, fs)
    if len(models) < fs.n_levels:
        raise ValueError(f"mode {fs.mode} needs {fs.n_levels} model levels, got {len(models)}")
    feats = extract_features(y, fs)
    acts = nmf_infer_multires(feats, models[:fs.n_levels], ns.infer_config())
    estimates = [reconstruct_sources(z1, z2, m1, m2)
                 for (z1, z2), (m1, m2) in zip(acts, models)]
    if fs.mode == "stft":
        e1, e2 = estimates[0]
        return mask_and_invert(y, soft_mask(e1, e2, ns.mask_exponent), fs.stft_config)
    return greedy_scatt_inversion(y, estimates, fs.filterbank(), ns.mask_exponent)


# ---- neural ---------------------------------------------------------------


def _check_arch(arch: str, fs: FeatureSettings):
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}; choose from {sorted(ARCHS)}")
    wanted = "haar" if ARCHS[arch].inputs == "haar" else "scatt1"
    if fs.mode != wanted:
        raise ValueError(f"arch {arch} needs feature mode {wanted!r}, config has {fs.mode!r}")


def build_for(arch: str, fs: FeatureSettings, seed: int = 0, **kwargs):
    _check_arch(arch, fs)
    fb = fs.filterbank()
    return build_network(arch, fb.n_outputs, seed=seed, J2=fs.J2, **kwargs)


def train_dnn(mixtures, arch: str, fs: FeatureSettings, cfg: TrainConfig,
              **kwargs) -> TrainResult:
    """Train a mask network on ``(y, x1, x2)`` mixtures."""
    if not mixtures:
        raise ValueError("no training mixtures")
    net = build_for(arch, fs, seed=cfg.seed, **kwargs)
    fb = fs.filterbank()
    examples = [make_example(net, scatter_layer1(y, fb), scatter_layer1(a, fb),
                             scatter_layer1(b, fb)) for y, a, b in mixtures]
    return train_network(net, examples, cfg)


def separate_dnn(y: AudioClip, net, fs: FeatureSettings):
    y = prepare_clip(y, fs)
    fb = fs.filterbank()
    layer1 = scatter_layer1(y, fb)
    return invert_layer1_masks(y, predict_masks(net, layer1), fb, layer1)
