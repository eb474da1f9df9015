"""Analytic Morlet filter banks with a constant number of bands per octave.

Filters are defined in the frequency domain on normalized angular
frequency ``omega`` in ``[-pi, pi)`` (radians per sample) and evaluated on
demand for any FFT length.  Two normalizations are available:

``"lp"``
    the Littlewood-Paley sum peaks just below 1, so the undecimated
    transform is non-expansive;
``"decimated"``
    the largest eigenvalue of the polyphase frame operator at the bank's
    stride is 1, so for every real ``x``
    ``stride * sum_k ||(x * h_k)[::stride]||^2 <= ||x||^2`` (aliasing included).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft

# f_max as a fraction of the sample rate; keeps the top Morlet tail below Nyquist.
TOP_FREQUENCY_RATIO = 0.4
# centre of the highest dyadic (Q=1) wavelet, radians per sample
DYADIC_TOP_FREQUENCY = 0.6 * np.pi
# time-domain support used for reflect padding, in Gaussian standard deviations
_PAD_SIGMAS = 4.0
_FILTER_CHUNK = 16
_LP_MARGIN = 1e-5

_SQRT_LN2 = math.sqrt(math.log(2.0))


def _omega_grid(n: int) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(n)


def _floor_pow2(x: float) -> int:
    return 1 << max(0, int(math.floor(math.log2(x))))


@dataclass(frozen=True, eq=False)
class MorletBank:
    """Constant-Q bank of analytic Morlet band-pass filters plus a Gaussian low-pass.

    Attributes
    ----------
    q : int
        Bands per octave.
    n_octaves : int
        Number of octaves spanned by the band-pass filters.
    xi_max : float
        Centre of the highest band-pass filter (rad/sample).
    stride : int
        Critical subsampling step of the bank's outputs (samples).
    sample_rate : float or None
        Only used to express centre frequencies in Hz.
    """

    q: int
    n_octaves: int
    xi_max: float
    stride: int
    sample_rate: float | None = None
    normalize: str = "lp"
    centers: np.ndarray = field(init=False, repr=False)
    sigmas: np.ndarray = field(init=False, repr=False)
    phi_sigma: float = field(init=False)
    phi_gain: float = field(init=False, default=1.0)
    gain: float = field(init=False)

    def __post_init__(self):
        if self.q < 1 or self.n_octaves < 1:
            raise ValueError("q and n_octaves must be >= 1")
        if not 0 < self.xi_max < np.pi:
            raise ValueError("xi_max must lie in (0, pi)")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        r = 2.0 ** (1.0 / self.q)
        j = np.arange(self.q * self.n_octaves)
        centers = self.xi_max * 2.0 ** (-j / self.q)
        # adjacent filters cross at -3 dB (half power)
        sigmas = centers * (r - 1) / ((1 + r) * _SQRT_LN2)
        # low-pass half-power point at half the lowest centre
        crossing = centers[-1] / 2
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "phi_sigma", crossing / _SQRT_LN2)
        object.__setattr__(self, "phi_gain", 1.0)
        # wavelet gain is solved so the bound reaches exactly 1 with a unit-DC low-pass
        if self.normalize == "lp":
            gain = self._lp_gain()
        elif self.normalize == "decimated":
            gain = self._decimated_gain()
        else:
            raise ValueError(f"unknown normalization {self.normalize!r}")
        object.__setattr__(self, "gain", gain)

    # -- filter definitions -------------------------------------------------

    @property
    def n_bands(self) -> int:
        return self.centers.shape[0]

    @property
    def n_outputs(self) -> int:
        """Band-pass filters plus the low-pass."""
        return self.n_bands + 1

    @property
    def covered_band(self) -> tuple[float, float]:
        """Band from the lowest to the highest wavelet centre (rad/sample)."""
        return float(self.centers[-1]), self.xi_max

    def center_frequencies_hz(self) -> np.ndarray:
        if self.sample_rate is None:
            raise ValueError("bank has no sample rate")
        return self.centers * self.sample_rate / (2 * np.pi)

    def _psi_raw(self, omega, index=None) -> np.ndarray:
        omega = np.asarray(omega, dtype=np.float64)
        xi = self.centers if index is None else self.centers[index]
        sg = self.sigmas if index is None else self.sigmas[index]
        xi = np.atleast_1d(xi)[:, None]
        sg = np.atleast_1d(sg)[:, None]
        main = np.exp(-((omega - xi) ** 2) / (2 * sg ** 2))
        # Morlet correction: exactly zero response at omega = 0
        kappa = np.exp(-(xi ** 2) / (2 * sg ** 2))
        return main - kappa * np.exp(-(omega ** 2) / (2 * sg ** 2))

    def psi_hat(self, omega, index=None) -> np.ndarray:
        """Band-pass frequency responses, shape ``(n_bands, len(omega))``."""
        return self.gain * self._psi_raw(omega, index)

    def phi_hat(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=np.float64)
        return self.phi_gain * np.exp(-(omega ** 2) / (2 * self.phi_sigma ** 2))

    @property
    def band_pass_filters(self) -> np.ndarray:
        return self.psi_fft(self.default_fft_size)

    @property
    def low_pass(self) -> np.ndarray:
        return self.phi_fft(self.default_fft_size)

    @property
    def default_fft_size(self) -> int:
        return 1 << int(math.ceil(math.log2(8 * self.support)))

    def psi_fft(self, n: int) -> np.ndarray:
        return _cached_psi(self, n)

    def phi_fft(self, n: int) -> np.ndarray:
        return _cached_phi(self, n)

    @property
    def support(self) -> int:
        """Half-length (samples) beyond which every filter is negligible."""
        widest = 1.0 / min(self.sigmas.min(), self.phi_sigma)
        return int(math.ceil(_PAD_SIGMAS * widest))

    def littlewood_paley(self, omega) -> np.ndarray:
        """Real-input energy sum ``|phi|^2 + 1/2 sum_l (|psi_l(w)|^2 + |psi_l(-w)|^2)``."""
        omega = np.asarray(omega, dtype=np.float64)
        pos = np.sum(self.psi_hat(omega) ** 2, axis=0)
        neg = np.sum(self.psi_hat(-omega) ** 2, axis=0)
        return self.phi_hat(omega) ** 2 + 0.5 * (pos + neg)

    def frame_bounds(self, n_points: int = 1 << 16) -> tuple[float, float]:
        """Min and max of the Littlewood-Paley sum over the covered band."""
        lo, hi = self.covered_band
        grid = np.linspace(lo, hi, n_points)
        lp = self.littlewood_paley(grid)
        return float(lp.min()), float(lp.max())

    def negative_frequency_ratio(self, n: int | None = None) -> np.ndarray:
        """Fraction of each band-pass filter's energy at negative frequencies."""
        n = n or self.default_fft_size
        omega = _omega_grid(n)
        energy = self.psi_fft(n) ** 2
        return energy[:, omega < 0].sum(axis=1) / energy.sum(axis=1)

    def _lp_gain(self) -> float:
        narrowest = min(self.sigmas.min(), self.phi_sigma)
        grid = np.linspace(-np.pi, np.pi, int(2 * np.pi / (narrowest / 8)) + 1)
        psi_sq = np.zeros_like(grid)
        for start in range(0, self.n_bands, _FILTER_CHUNK):
            sel = slice(start, start + _FILTER_CHUNK)
            psi_sq += np.sum(self._psi_raw(grid, sel) ** 2, axis=0)
        # grid is symmetric about 0, so reversing it maps omega -> -omega
        band = 0.5 * (psi_sq + psi_sq[::-1])
        room = 1.0 - self.phi_hat(grid) ** 2
        live = band > 1e-12 * band.max()
        # margin for peaks falling between grid points
        return float(np.sqrt((1.0 - _LP_MARGIN) * np.min(room[live] / band[live])))

    def _polyphase_terms(self, thetas):
        """Low-pass vectors and wavelet operators for the decimated frame.

        At stride ``D`` and each ``theta`` the real-input frame operator is
        ``p p^H + gain^2 * W`` with ``p_j = phi(theta_j)`` and
        ``W = 1/2 sum_l (u_l u_l^H + v_l v_l^H)``, ``u_l = psi_l(theta_j)``,
        ``v_l = psi_l(-theta_j)``, ``theta_j = theta + 2 pi j / D``.
        """
        d = self.stride
        aliases = 2 * np.pi * np.arange(d) / d
        omega = np.angle(np.exp(1j * (thetas[:, None] + aliases[None, :])))
        flat = omega.ravel()
        u = self._psi_raw(flat).reshape(self.n_bands, len(thetas), d)
        v = self._psi_raw(-flat).reshape(self.n_bands, len(thetas), d)
        p = self.phi_hat(flat).reshape(len(thetas), d)
        w = 0.5 * (np.einsum("kti,ktj->tij", u, u) + np.einsum("kti,ktj->tij", v, v))
        return p[:, :, None] * p[:, None, :], w

    def _theta_grid(self) -> np.ndarray:
        # log spacing: resolution tracks the constant-Q bandwidth at every scale
        upper = 2 * np.pi / self.stride
        rel = float(np.min(self.sigmas / self.centers)) / 16
        lowest = min(self.phi_sigma, self.centers[-1]) * 1e-3
        n_log = int(math.ceil(math.log(upper / lowest) / rel))
        grid = np.concatenate([[0.0], np.geomspace(lowest, upper, n_log, endpoint=False),
                               np.linspace(0.0, upper, 1024, endpoint=False)])
        return np.unique(grid)

    def _decimated_gain(self) -> float:
        thetas = self._theta_grid()
        n_theta = len(thetas)
        pp, w = self._polyphase_terms(thetas)
        low_peak = np.linalg.eigvalsh(pp)[:, -1].max()
        if low_peak > 1 - 1e-3:
            # low-pass aliases onto itself; leave room for the wavelets
            shrink = (1 - 1e-3) / low_peak
            object.__setattr__(self, "phi_gain", math.sqrt(shrink))
            pp = pp * shrink
        # largest g^2 with lambda_max(pp + g^2 w) <= 1, bisected per theta
        lo = np.zeros(n_theta)
        hi = np.full(n_theta, 1.0)
        for _ in range(64):
            over = np.linalg.eigvalsh(pp + hi[:, None, None] * w)[:, -1] > 1
            if over.all():
                break
            hi[~over] *= 2
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            over = np.linalg.eigvalsh(pp + mid[:, None, None] * w)[:, -1] > 1
            hi = np.where(over, mid, hi)
            lo = np.where(over, lo, mid)
        # 0.1% margin against peaks falling between grid points
        return float(np.sqrt(lo.min() * (1 - 1e-3)))

    def decimated_bound(self) -> float:
        """Upper frame bound of the bank subsampled at its stride (real inputs)."""
        thetas = self._theta_grid()
        best = 0.0
        chunk = max(1, 4096 // self.stride)
        for start in range(0, len(thetas), chunk):
            pp, w = self._polyphase_terms(thetas[start:start + chunk])
            best = max(best, float(np.linalg.eigvalsh(pp + self.gain ** 2 * w)[:, -1].max()))
        return best

    # -- filtering ----------------------------------------------------------

    def pad_length(self, n: int) -> int:
        return min(self.support, 3 * n)

    def analysis(self, x, stride: int | None = None, bands=None):
        """Filter real signals with every band-pass and the low-pass.

        Parameters
        ----------
        x : ndarray, shape (..., n)
            Real input signals (last axis is time).
        stride : int, optional
            Output subsampling step; defaults to the bank's critical stride.
        bands : slice or array of indices, optional
            Subset of band-pass filters to evaluate.

        Returns
        -------
        subbands : ndarray, shape (n_selected_bands, ..., n_out), complex
        lowpass : ndarray, shape (..., n_out), real
        """
        stride = self.stride if stride is None else stride
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[-1]
        xf, pad, size = self._padded_spectrum(x)
        idx = np.arange(self.n_bands)[bands] if bands is not None else np.arange(self.n_bands)
        n_out = len(range(0, n, stride))
        subbands = np.empty((len(idx),) + x.shape[:-1] + (n_out,), dtype=np.complex128)
        psi = self.psi_fft(size)
        for start in range(0, len(idx), _FILTER_CHUNK):
            sel = idx[start:start + _FILTER_CHUNK]
            y = scipy.fft.ifft(xf[None, ...] * _expand(psi[sel], x.ndim), axis=-1)
            subbands[start:start + len(sel)] = y[..., pad:pad + n:stride]
        low = scipy.fft.ifft(xf * self.phi_fft(size), axis=-1).real
        return subbands, low[..., pad:pad + n:stride]

    def _padded_spectrum(self, x):
        n = x.shape[-1]
        pad = self.pad_length(n)
        widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
        xp = np.pad(x, widths, mode="reflect") if n > 1 else np.pad(x, widths, mode="edge")
        size = scipy.fft.next_fast_len(xp.shape[-1])
        xp = np.pad(xp, [(0, 0)] * (x.ndim - 1) + [(0, size - xp.shape[-1])])
        return scipy.fft.fft(xp, axis=-1), pad, size

    def masked_synthesis(self, x, masks, lowpass_masks):
        """Filter ``x`` through the bank, mask every full-rate subband, resynthesize.

        ``masks`` has shape ``(n_sources, n_bands, n)`` and ``lowpass_masks``
        ``(n_sources, n)``; both are full-rate gains.  Resynthesis uses the
        canonical dual frame (division by the Littlewood-Paley sum); where the
        sum falls below 1e-3 of its maximum the band is treated as uncovered
        and set to zero.  Returns an array ``(n_sources, n)``.
        """
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[-1]
        masks = np.asarray(masks, dtype=np.float64)
        lowpass_masks = np.asarray(lowpass_masks, dtype=np.float64)
        n_src = masks.shape[0]
        xf, pad, size = self._padded_spectrum(x)
        psi = self.psi_fft(size)
        phi = self.phi_fft(size)
        acc = np.zeros((n_src, size), dtype=np.complex128)

        def padded(m):
            m = np.pad(m, [(0, 0)] * (m.ndim - 1) + [(pad, pad)], mode="edge")
            return np.pad(m, [(0, 0)] * (m.ndim - 1) + [(0, size - m.shape[-1])], mode="edge")

        for start in range(0, self.n_bands, _FILTER_CHUNK):
            sel = slice(start, start + _FILTER_CHUNK)
            sub = scipy.fft.ifft(xf[None, :] * psi[sel], axis=-1)
            for s in range(n_src):
                spec = scipy.fft.fft(sub * padded(masks[s, sel]), axis=-1)
                acc[s] += np.sum(spec * psi[sel], axis=0)
        # real part of an analytic synthesis in the frequency domain
        acc = 0.5 * (acc + np.conj(acc[:, (-np.arange(size)) % size]))
        low = scipy.fft.ifft(xf * phi).real
        for s in range(n_src):
            acc[s] += scipy.fft.fft(low * padded(lowpass_masks[s])) * phi
        lp = self.littlewood_paley(_omega_grid(size))
        inv = np.where(lp > 1e-3 * lp.max(), 1.0 / np.maximum(lp, 1e-300), 0.0)
        out = scipy.fft.ifft(acc * inv, axis=-1).real
        return out[:, pad:pad + n]


def _expand(h, ndim):
    # (k, L) -> (k, 1, ..., 1, L) to broadcast against (..., L)
    return h.reshape(h.shape[:1] + (1,) * (ndim - 1) + h.shape[1:])


@lru_cache(maxsize=64)
def _cached_psi(bank: MorletBank, n: int) -> np.ndarray:
    arr = bank.psi_hat(_omega_grid(n))
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=64)
def _cached_phi(bank: MorletBank, n: int) -> np.ndarray:
    arr = bank.phi_hat(_omega_grid(n))
    arr.setflags(write=False)
    return arr


class WaveletFilterBank(MorletBank):
    """First-layer constant-Q bank designed from audio parameters."""

    @property
    def Q(self) -> int:
        return self.q

    @property
    def J1(self) -> int:
        return self.n_octaves

    @property
    def critical_stride(self) -> int:
        return self.stride

    @property
    def f_max(self) -> float:
        return TOP_FREQUENCY_RATIO * self.sample_rate


DEFAULT_Q = 32
DEFAULT_J1 = 5
MIN_FRAME_BOUND = 0.5
MAX_FRAME_BOUND = 1.05


@lru_cache(maxsize=16)
def design_filterbank(Q: int = DEFAULT_Q, J1: int = DEFAULT_J1,
                      sample_rate: int = 16000) -> WaveletFilterBank:
    """Design the first-layer Morlet bank.

    Band-pass centres are ``f_max 2^(-j/Q)`` for ``j = 0 .. Q*J1 - 1`` with
    ``f_max = 0.4 * sample_rate``.  The critical stride is the reciprocal of
    the widest (-3 dB) filter bandwidth, rounded down to a power of two.
    """
    if Q < 1 or J1 < 1:
        raise ValueError("Q and J1 must be >= 1")
    if 2 ** J1 > sample_rate:
        raise ValueError("2**J1 must not exceed the sample rate")
    xi_max = 2 * np.pi * TOP_FREQUENCY_RATIO
    r = 2.0 ** (1.0 / Q)
    widest = 2 * xi_max * (r - 1) / (1 + r)  # -3 dB bandwidth of the top filter
    stride = _floor_pow2(2 * np.pi / widest)
    lowest = xi_max * 2.0 ** (-(Q * J1 - 1) / Q)
    if lowest * sample_rate / (2 * np.pi) < 1.0:
        raise ValueError("bank extends below 1 Hz; reduce J1")
    bank = WaveletFilterBank(q=Q, n_octaves=J1, xi_max=xi_max, stride=stride,
                             sample_rate=sample_rate)
    lower, upper = bank.frame_bounds()
    if lower < MIN_FRAME_BOUND or upper > MAX_FRAME_BOUND:
        raise ValueError(
            f"Q={Q}, J1={J1} leaves the covered band outside frame bounds "
            f"[{MIN_FRAME_BOUND}, {MAX_FRAME_BOUND}]: [{lower:.3f}, {upper:.3f}]")
    return bank


@lru_cache(maxsize=16)
def design_dyadic_bank(n_octaves: int, stride: int = 2) -> MorletBank:
    """Q=1 Morlet bank used by the second and deeper scattering layers."""
    return MorletBank(q=1, n_octaves=n_octaves, xi_max=DYADIC_TOP_FREQUENCY, stride=stride,
                      normalize="decimated")
