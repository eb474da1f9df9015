import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatsep.audio import AudioClip
from scatsep.transforms.stft import StftConfig, istft, stft

SR = 16000


def test_rows_and_frames():
    cfg = StftConfig()
    x = AudioClip(np.zeros(SR), SR)
    spec = stft(x, cfg)
    assert spec.shape[0] == 513
    assert spec.shape[1] == (SR + 1024 - 1024) // 512 + 1
    assert not np.any(spec.values)
    np.testing.assert_array_equal(istft(spec).samples, 0.0)


def test_config_validation():
    with pytest.raises(ValueError, match="hop"):
        StftConfig(1024, 256, 1024)
    with pytest.raises(ValueError):
        StftConfig(1024, 512, 512)


def test_tone_peak_bin():
    t = np.arange(SR) / SR
    spec = stft(AudioClip(np.sin(2 * np.pi * 1000 * t), SR))
    # reflect padding puts a kink into the edge frames of a sine
    assert np.all(np.argmax(spec.magnitude(), axis=0)[1:-1] == 64)
    # a cosine with crests at both ends reflects smoothly: every frame peaks at 64
    t = np.arange(SR + 1) / SR
    spec = stft(AudioClip(np.cos(2 * np.pi * 1000 * t), SR))
    assert np.all(np.argmax(spec.magnitude(), axis=0) == 64)


def test_matches_direct_dft(rng):
    x = rng.standard_normal(4000)
    cfg = StftConfig(256, 128, 512)
    spec = stft(AudioClip(x, SR), cfg)
    k = 7
    xp = np.pad(x, 128, mode="reflect")
    frame = xp[k * 128:k * 128 + 256] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(256) / 256))
    bins = np.arange(257)
    direct = np.exp(-2j * np.pi * np.outer(bins, np.arange(256)) / 512) @ frame
    np.testing.assert_allclose(spec.values[:, k], direct, atol=1e-9)


def test_roundtrip_noise(rng):
    x = rng.standard_normal(SR)
    y = istft(stft(AudioClip(x, SR))).samples
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-6


@settings(max_examples=25, deadline=None)
@given(n=st.integers(600, 5000), win=st.sampled_from([64, 256, 1024]),
       seed=st.integers(0, 2**31))
def test_roundtrip_property(n, win, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    if n <= win // 2:
        return
    y = istft(stft(AudioClip(x, SR), StftConfig(win, win // 2, win))).samples
    assert len(y) == n
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-6


def test_istft_linearity(rng):
    spec = stft(AudioClip(rng.standard_normal(3000), SR))
    a = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
    b = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
    lhs = istft(spec.with_values(a)).samples + istft(spec.with_values(b)).samples
    np.testing.assert_allclose(lhs, istft(spec.with_values(a + b)).samples, atol=1e-9)


def test_too_short():
    with pytest.raises(ValueError, match="too short"):
        stft(AudioClip(np.zeros(100), SR))


def test_grid_mismatch(rng):
    spec = stft(AudioClip(rng.standard_normal(3000), SR))
    with pytest.raises(ValueError, match="grid"):
        spec.with_values(np.zeros((10, 10)))
