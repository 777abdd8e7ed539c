"""STFT / mel front end, SNR-targeted mixing and SI-SNR."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    power: float = 2.0
    # divide each windowed frame by sqrt(sum(window^2)) so mel energies are O(signal power)
    normalized: bool = True

    def __post_init__(self):
        if self.hop < 1 or self.hop > self.n_fft:
            raise ValueError(f"MelConfig: hop={self.hop} must be in [1, n_fft={self.n_fft}]")
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError(f"MelConfig: need 0 <= f_min < f_max <= {self.sample_rate / 2}")
        if self.power != 2.0:
            raise ValueError("MelConfig: only power=2 (power spectrogram) is differentiable here")

    def n_frames(self, length: int) -> int:
        return (length - self.n_fft) // self.hop + 1


@dataclass(frozen=True)
class SnrRange:
    low: float = -5.0
    high: float = 20.0

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"SnrRange: low {self.low} > high {self.high}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hann(n: int) -> np.ndarray:
    # periodic window, the usual choice for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def analysis_window(cfg: MelConfig) -> np.ndarray:
    w = hann(cfg.n_fft)
    return w / np.sqrt(np.sum(w * w)) if cfg.normalized else w


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular HTK-mel filters, shape [n_mels, n_fft // 2 + 1], peak value 1."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_centers(cfg: MelConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def dft_matrices(n_fft: int) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary one-sided DFT bases, each [n_fft, n_fft // 2 + 1]."""
    n = np.arange(n_fft)[:, None]
    k = np.arange(n_fft // 2 + 1)[None]
    # reduce the phase index mod n_fft before scaling to keep the angles exact-ish
    ang = 2.0 * np.pi * ((n * k) % n_fft) / n_fft
    cos, sin = np.cos(ang), -np.sin(ang)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def dft(frames: np.ndarray) -> np.ndarray:
    """One-sided DFT of the last axis by direct O(n^2) summation."""
    cos, sin = dft_matrices(frames.shape[-1])
    return frames @ cos + 1j * (frames @ sin)


def fft_radix2(frames: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis (one-sided output)."""
    x = np.asarray(frames, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"fft_radix2: length {n} is not a power of two")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for i in range(n):
        rev[i] = int(format(i, f"0{bits}b")[::-1], 2) if bits else 0
    x = x[..., rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        x = x.reshape(x.shape[:-1] + (n // size, size))
        even = x[..., :half]
        odd = x[..., half:] * tw
        x = np.concatenate([even + odd, even - odd], axis=-1).reshape(x.shape[:-2] + (n,))
        size *= 2
    return x[..., : n // 2 + 1]


def stft_power(wave: np.ndarray, cfg: MelConfig, method: str = "dft") -> np.ndarray:
    """|STFT|^2 without mel projection, shape [..., n_frames, n_fft // 2 + 1] (numpy only)."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape[-1] < cfg.n_fft:
        raise ValueError(f"stft: signal length {wave.shape[-1]} < n_fft {cfg.n_fft}")
    frames = T.frame(Tensor(wave), cfg.n_fft, cfg.hop).data * analysis_window(cfg)
    spec = {"dft": dft, "fft": fft_radix2}[method](frames)
    return spec.real ** 2 + spec.imag ** 2


def mel_spectrogram(wave, cfg: MelConfig = MelConfig()) -> Tensor:
    """Power mel spectrogram, [n_mels, n_frames] (or [B, n_mels, n_frames]); differentiable."""
    wave = as_tensor(wave)
    if wave.shape[-1] < cfg.n_fft:
        raise ValueError(f"mel_spectrogram: signal length {wave.shape[-1]} < n_fft {cfg.n_fft}")
    cos, sin = dft_matrices(cfg.n_fft)
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    frames = T.frame(wave, cfg.n_fft, cfg.hop) * analysis_window(cfg)
    re = T.matmul(frames, Tensor(cos))
    im = T.matmul(frames, Tensor(sin))
    power = T.square(re) + T.square(im)
    mel = T.matmul(power, Tensor(fb.T))
    return T.swapaxes(mel, -1, -2)


def snr_gain(clean, noise, target_snr: float) -> float:
    """Gain g such that clean + g * noise has the requested SNR in dB (power ratio)."""
    c = np.asarray(getattr(clean, "data", clean), dtype=np.float64)
    n = np.asarray(getattr(noise, "data", noise), dtype=np.float64)
    p_noise = np.mean(n * n)
    if p_noise <= 0:
        raise ValueError("snr_gain: noise is silent (zero power)")
    p_clean = np.mean(c * c)
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (target_snr / 10.0))))


def snr_db(clean, noise) -> float:
    c = np.asarray(getattr(clean, "data", clean), dtype=np.float64)
    n = np.asarray(getattr(noise, "data", noise), dtype=np.float64)
    return float(10.0 * np.log10(np.sum(c * c) / np.sum(n * n)))


SI_SNR_CAP = 60.0


def si_snr(reference, estimate, cap: float | None = SI_SNR_CAP) -> float:
    """Scale-invariant SNR of ``estimate`` against ``reference`` in dB.

    The estimate is projected onto the reference; no mean removal is applied.
    Values are capped at ``cap`` (pass None for the raw value).
    """
    s = np.asarray(getattr(reference, "data", reference), dtype=np.float64).reshape(-1)
    x = np.asarray(getattr(estimate, "data", estimate), dtype=np.float64).reshape(-1)
    if s.shape != x.shape:
        raise ValueError(f"si_snr: length mismatch {s.shape} vs {x.shape}")
    ref_energy = float(s @ s)
    if ref_energy <= 0:
        raise ValueError("si_snr: reference has zero power")
    target = (x @ s) / ref_energy * s
    err = x - target
    num, den = float(target @ target), float(err @ err)
    if den == 0.0:
        val = np.inf
    elif num == 0.0:
        val = -np.inf
    else:
        val = 10.0 * np.log10(num / den)
    return val if cap is None else float(min(val, cap))
