"""Shared synthetic signal builders used across test modules."""

import numpy as np

from affectsense.physiology import RgbTrace


def make_cardiac_trace(bpm, snr_db=10.0, seed=0, n=300, fs=15.0,
                       baseline=(140.0, 120.0, 110.0), drift=4.0):
    """Face colour trace with a cardiac sinusoid buried in noise.

    The pulse rides mostly on the green channel at the requested per-channel
    SNR; a slow linear drift stresses the detrending stage.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs
    pulse = np.sin(2.0 * np.pi * (bpm / 60.0) * t)
    gains = np.array([0.4, 1.0, 0.3])
    samples = np.empty((n, 3))
    for ch in range(3):
        amp = gains[ch]
        noise_sd = amp / np.sqrt(2.0 * 10.0 ** (snr_db / 10.0))
        samples[:, ch] = (baseline[ch] + drift * t / t[-1]
                          + amp * pulse + rng.normal(0.0, noise_sd, n))
    return RgbTrace(samples, sample_rate=fs, start_time=0)


def make_breathing_trace(breaths_per_minute, seed=0, n=300, fs=15.0,
                         noise_sd=0.05):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs
    wave = np.sin(2.0 * np.pi * (breaths_per_minute / 60.0) * t)
    samples = np.stack([
        100.0 + rng.normal(0.0, noise_sd, n),
        120.0 + wave + rng.normal(0.0, noise_sd, n),
        90.0 + rng.normal(0.0, noise_sd, n),
    ], axis=1)
    return RgbTrace(samples, sample_rate=fs, start_time=0)


def dft_peak_frequency(x, fs, band):
    """Independent spectral oracle: zero-padded DFT argmax inside a band."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    nfft = 1
    while nfft < 16 * x.size:
        nfft *= 2
    power = np.abs(np.fft.rfft(x, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    return float(freqs[mask][np.argmax(power[mask])])
