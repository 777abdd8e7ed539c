import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codecse import tensor as T
from codecse.dsp import (MelConfig, SnrRange, dft, fft_radix2, hann, hz_to_mel, mel_centers,
                         mel_filterbank, mel_spectrogram, mel_to_hz, si_snr, snr_db, snr_gain, stft_power)
from codecse.tensor import Tensor, grad_check


def test_mel_config_validation():
    with pytest.raises(ValueError):
        MelConfig(hop=2048)
    with pytest.raises(ValueError):
        MelConfig(f_max=9000.0)
    with pytest.raises(ValueError):
        MelConfig(power=1.0)


def test_snr_range_validation():
    with pytest.raises(ValueError):
        SnrRange(5.0, -5.0)


def test_n_frames_formula():
    assert MelConfig().n_frames(16000) == 59
    assert mel_spectrogram(np.zeros(16000)).shape == (80, 59)


def test_zero_input_gives_zero_mel():
    assert np.all(mel_spectrogram(np.zeros(2048)).data == 0.0)


def test_short_input_rejected():
    with pytest.raises(ValueError, match="n_fft"):
        mel_spectrogram(np.zeros(1000))


def test_tone_peaks_in_band_containing_its_frequency():
    cfg = MelConfig()
    t = np.arange(8000) / 16000
    m = mel_spectrogram(np.sin(2 * np.pi * 1000 * t), cfg).data
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    bin_1k = int(round(1000 * cfg.n_fft / cfg.sample_rate))
    containing = np.flatnonzero(fb[:, bin_1k] > 0)
    peak = np.argmax(m, axis=0)
    assert np.all(np.isin(peak, containing))


def test_filterbank_rows_nonnegative_and_contiguous():
    fb = mel_filterbank(16000, 1024, 80, 0.0, 8000.0)
    assert fb.shape == (80, 513)
    assert np.all(fb >= 0)
    for row in fb:
        nz = np.flatnonzero(row > 0)
        assert nz.size > 0
        assert np.all(np.diff(nz) == 1)


def test_filterbank_covers_interior():
    cfg = MelConfig()
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    centers = mel_centers(cfg)
    interior = (freqs > centers[0]) & (freqs < centers[-1])
    assert np.all(fb.sum(0)[interior] > 0)


def test_mel_scale_round_trip():
    f = np.array([0.0, 100.0, 1000.0, 7999.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(1000.0) == pytest.approx(999.99, abs=0.01)


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0.0 and w[4] == pytest.approx(1.0)


@pytest.mark.parametrize("n", [1, 2, 8, 64, 1024])
def test_dft_and_fft_agree(n, rng):
    x = rng.normal(size=(3, n))
    a, b = dft(x), fft_radix2(x)
    assert np.max(np.abs(a - b)) <= 1e-9
    np.testing.assert_allclose(a, np.fft.rfft(x), atol=1e-9)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        fft_radix2(np.zeros(12))


def test_stft_paths_agree(rng):
    cfg = MelConfig()
    x = rng.normal(size=4000)
    assert np.max(np.abs(stft_power(x, cfg, "dft") - stft_power(x, cfg, "fft"))) <= 1e-9


def test_mel_spectrogram_gradient(rng):
    cfg = MelConfig(n_fft=32, hop=8, n_mels=6)
    x = Tensor(rng.normal(size=64), requires_grad=True)
    proj = rng.normal(size=mel_spectrogram(x.data, cfg).shape)
    assert grad_check(lambda x: T.tsum(mel_spectrogram(x, cfg) * proj), [x]).max_rel_error <= 1e-4


def test_batched_mel_matches_single(rng):
    x = rng.normal(size=(2, 2048))
    m = mel_spectrogram(x).data
    for i in range(2):
        np.testing.assert_allclose(m[i], mel_spectrogram(x[i]).data, rtol=1e-12, atol=1e-15)


# SNR gain

@pytest.mark.parametrize("snr,g", [(0.0, 1.0), (20.0, 0.1), (-5.0, 10 ** 0.25)])
def test_snr_gain_equal_power(snr, g):
    c = np.array([1.0, -1.0, 1.0, -1.0])
    n = np.array([1.0, 1.0, -1.0, -1.0])
    assert snr_gain(c, n, snr) == pytest.approx(g, rel=1e-12)
    assert snr_gain(c, n, -5.0) == pytest.approx(1.77828, abs=1e-5)


def test_snr_gain_rejects_silent_noise():
    with pytest.raises(ValueError, match="silent"):
        snr_gain(np.ones(4), np.zeros(4), 0.0)


@given(seed=st.integers(0, 2**32 - 1), target=st.floats(-5.0, 20.0))
def test_mixing_hits_requested_snr(seed, target):
    rng = np.random.default_rng(seed)
    c, n = rng.normal(size=512), rng.normal(scale=rng.uniform(0.01, 10), size=512)
    g = snr_gain(c, n, target)
    assert abs(snr_db(c, g * n) - target) <= 0.01


# SI-SNR

def test_si_snr_identity_and_scale_hit_cap(rng):
    x = rng.normal(size=100)
    assert si_snr(x, x) == 60.0
    assert si_snr(x, 3 * x) == 60.0


def test_si_snr_orthogonal_noise():
    s = np.zeros(100)
    s[0] = 10.0
    e = np.zeros(100)
    e[1] = 1.0
    assert si_snr(s, s + e) == pytest.approx(20.0, abs=0.01)


@given(seed=st.integers(0, 2**32 - 1), a=st.floats(1e-3, 1e3))
def test_si_snr_scale_invariant(seed, a):
    rng = np.random.default_rng(seed)
    s, x = rng.normal(size=64), rng.normal(size=64)
    assert abs(si_snr(s, a * x, cap=None) - si_snr(s, x, cap=None)) <= 1e-9


def test_si_snr_rejects_zero_reference():
    with pytest.raises(ValueError, match="zero"):
        si_snr(np.zeros(5), np.ones(5))


def test_si_snr_rejects_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        si_snr(np.ones(5), np.ones(6))


def test_si_snr_uncapped_is_infinite_for_exact_match():
    x = np.arange(1.0, 5.0)
    assert si_snr(x, x, cap=None) == np.inf
