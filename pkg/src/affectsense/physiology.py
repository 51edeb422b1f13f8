"""Camera-based vital-sign estimation from face-region colour traces.

The heart-rate path works on the mean RGB of the face region over a
sliding window: z-normalize each channel, remove the slow trend with a
smoothness-priors fit, unmix with FastICA, and pick the source whose
spectral peak inside the cardiac band has the best signal-to-noise ratio.
Respiration comes from the green channel alone: band-pass to the
breathing band, fit an autoregressive model with Burg's recursion, and
read the rate off the strongest in-band pole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal
import scipy.sparse
import scipy.sparse.linalg

SAMPLE_RATE = 15.0
HR_WINDOW = 300          # frames (20 s at 15 fps)
HR_HOP = 15
HR_BAND = (0.75, 4.0)    # Hz, i.e. 45..240 bpm
RESP_BAND = (0.1, 0.5)   # Hz, i.e. 6..30 breaths/min
DETREND_LAMBDA = 10.0
AR_ORDER = 9


class EmptyRoi(ValueError):
    """Bounding box does not cover any frame pixels."""


class TooShort(ValueError):
    """Signal shorter than the operation can support."""


class WindowIncomplete(ValueError):
    """Trace holds fewer frames than one estimation window."""


class ConvergenceFailure(RuntimeError):
    """ICA failed to converge or the channel covariance is degenerate."""


class NoPoleInBand(RuntimeError):
    """No usable AR pole (or no spectral energy) in the respiration band."""


@dataclass
class RgbTrace:
    """Per-frame spatially averaged RGB samples for one face.

    samples has shape (n, 3), one row per frame, at a fixed sample rate.
    start_time is the originating time of the first frame in microseconds.
    """

    samples: np.ndarray
    sample_rate: float = SAMPLE_RATE
    start_time: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ValueError("RgbTrace samples must have shape (n, 3)")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class HREstimate:
    bpm: float
    window_start: int
    window_end: int
    snr: float = 0.0

    def __post_init__(self):
        if not (45.0 <= self.bpm <= 240.0):
            raise ValueError(f"heart rate {self.bpm:.1f} bpm out of range")


@dataclass
class RespEstimate:
    breaths_per_minute: float
    window_start: int
    window_end: int

    def __post_init__(self):
        if not (6.0 <= self.breaths_per_minute <= 30.0):
            raise ValueError(
                f"respiration {self.breaths_per_minute:.1f} out of range")


def spatial_average(frame, bbox: tuple[int, int, int, int]) -> np.ndarray:
    """Mean R, G, B over the bbox region of a frame.

    Accepts a VideoFrame or a raw (h, w, 3) uint8 array. Raises EmptyRoi
    when the box does not intersect the frame.
    """
    pixels = np.asarray(getattr(frame, "pixels", frame))
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("expected (h, w, 3) pixel data")
    h, w = pixels.shape[:2]
    x, y, bw, bh = (int(v) for v in bbox)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + bw, w), min(y + bh, h)
    if x1 <= x0 or y1 <= y0:
        raise EmptyRoi(f"bbox {bbox} outside {w}x{h} frame")
    roi = pixels[y0:y1, x0:x1, :].astype(float)
    return roi.reshape(-1, 3).mean(axis=0)


def detrend(signal: np.ndarray, lam: float = DETREND_LAMBDA) -> np.ndarray:
    """Remove the smoothness-priors trend from a 1-D signal.

    The trend x minimizes ||z - x||^2 + lam * ||D2 x||^2 where D2 is the
    second-difference operator; the detrended signal is z - x. Constant and
    linear signals are reproduced exactly by the trend, so the residual of
    a pure ramp is ~0 and the residual mean is always ~0.
    """
    z = np.asarray(signal, dtype=float).ravel()
    n = z.size
    if n < 3:
        raise TooShort("detrending needs at least 3 samples")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ident = scipy.sparse.identity(n, format="csc")
    d2 = scipy.sparse.diags(
        [np.ones(n - 2), -2.0 * np.ones(n - 2), np.ones(n - 2)],
        offsets=[0, 1, 2], shape=(n - 2, n), format="csc")
    trend = scipy.sparse.linalg.spsolve(ident + lam * (d2.T @ d2), z)
    return z - trend


def _znorm(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    sd = x.std()
    if sd < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def ica_decompose(traces: np.ndarray, seed: int = 0, max_iter: int = 200,
                  tol: float = 1e-8) -> np.ndarray:
    """Separate channel mixtures into independent sources with FastICA.

    traces: (c, n) array of z-normalized channels. Uses the tanh contrast
    with symmetric decorrelation and a seeded initial unmixing matrix, so
    the same input always yields the same sources. Raises
    ConvergenceFailure when the covariance is degenerate (e.g. identical
    channels) or the fixed point is not reached within max_iter sweeps.
    """
    x = np.asarray(traces, dtype=float)
    if x.ndim != 2:
        raise ValueError("traces must be (channels, samples)")
    c, n = x.shape
    if n < 8 * c:
        raise TooShort("too few samples for ICA")
    x = x - x.mean(axis=1, keepdims=True)

    cov = (x @ x.T) / n
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] < 1e-10 * max(evals[-1], 1e-30):
        raise ConvergenceFailure("degenerate channel covariance")
    whiten = evecs @ np.diag(evals ** -0.5) @ evecs.T
    xw = whiten @ x

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((c, c)))
    for _ in range(max_iter):
        wx = w @ xw
        g = np.tanh(wx)
        g_prime = 1.0 - g * g
        w_new = (g @ xw.T) / n - np.diag(g_prime.mean(axis=1)) @ w
        w_new = _sym_decorrelate(w_new)
        delta = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if delta < tol:
            sources = w @ xw
            sd = sources.std(axis=1, keepdims=True)
            sd[sd < 1e-12] = 1.0
            return sources / sd
    raise ConvergenceFailure(f"no fixed point after {max_iter} iterations")


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    # W <- (W W^T)^(-1/2) W keeps rows orthonormal without ordering bias
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, 1e-12, None)
    return u @ np.diag(s ** -0.5) @ u.T @ w


def _power_spectrum(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    n = x.size
    nfft = 1
    while nfft < 4 * n:
        nfft *= 2
    spec = np.abs(np.fft.rfft(x, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    return freqs, spec


def _band_peak(freqs: np.ndarray, power: np.ndarray,
               band: tuple[float, float]) -> tuple[float, float]:
    mask = (freqs >= band[0]) & (freqs <= band[1])
    band_power = power[mask]
    if band_power.size == 0 or not np.any(band_power > 0):
        raise ConvergenceFailure("no spectral content in band")
    idx = int(np.argmax(band_power))
    peak_freq = float(freqs[mask][idx])
    snr = float(band_power[idx] / band_power.mean())
    return peak_freq, snr


def estimate_hr(trace: RgbTrace, window_length: int = HR_WINDOW,
                seed: int = 0) -> HREstimate:
    """Heart rate over the first full window of a face colour trace.

    Pipeline: z-normalize the three channels, detrend each, run FastICA,
    take each source's power spectrum, and keep the source whose peak in
    the 0.75..4 Hz band has the highest peak-to-band-mean SNR. Falls back
    to the detrended green channel when ICA cannot converge. Output is
    scale invariant because of the per-channel normalization.
    """
    if len(trace) < window_length:
        raise WindowIncomplete(
            f"need {window_length} frames, have {len(trace)}")
    fs = trace.sample_rate
    window = trace.samples[:window_length]
    channels = np.stack([_znorm(window[:, i]) for i in range(3)])
    channels = np.stack([_znorm(detrend(ch)) for ch in channels])
    try:
        sources = ica_decompose(channels, seed=seed)
    except (ConvergenceFailure, TooShort):
        sources = channels[1:2]  # green channel carries most plethysmography
    best: tuple[float, float] | None = None
    for source in sources:
        try:
            freq, snr = _band_peak(*_power_spectrum(source, fs), HR_BAND)
        except ConvergenceFailure:
            continue
        if best is None or snr > best[1]:
            best = (freq, snr)
    if best is None:
        raise ConvergenceFailure("no cardiac-band energy in any source")
    us_per_frame = 1_000_000.0 / fs
    return HREstimate(
        bpm=60.0 * best[0],
        window_start=trace.start_time,
        window_end=trace.start_time + round(window_length * us_per_frame),
        snr=best[1])


def sliding_hr(trace: RgbTrace, window_length: int = HR_WINDOW,
               hop: int = HR_HOP, seed: int = 0) -> list[HREstimate]:
    """One estimate per full window: floor((n - window)/hop) + 1 of them."""
    if len(trace) < window_length:
        raise WindowIncomplete(
            f"need {window_length} frames, have {len(trace)}")
    us_per_frame = 1_000_000.0 / trace.sample_rate
    out = []
    for k in range(0, len(trace) - window_length + 1, hop):
        sub = RgbTrace(trace.samples[k:k + window_length],
                       sample_rate=trace.sample_rate,
                       start_time=trace.start_time + round(k * us_per_frame))
        out.append(estimate_hr(sub, window_length, seed=seed))
    return out


def burg_ar(x: np.ndarray, order: int) -> np.ndarray:
    """Fit AR coefficients with Burg's recursion.

    Returns a of length order+1 with a[0] = 1 for the polynomial
    A(z) = 1 + a1 z^-1 + ... + ap z^-p; the model poles are the roots
    of A.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if order < 1:
        raise ValueError("order must be >= 1")
    if n <= order:
        raise TooShort(f"need more than {order} samples")
    f = x.copy()
    b = x.copy()
    a = np.array([1.0])
    for m in range(1, order + 1):
        fm = f[m:]
        bm = b[m - 1:n - 1]
        den = fm @ fm + bm @ bm
        if den < 1e-30:
            break
        k = -2.0 * (fm @ bm) / den
        f_new = fm + k * bm
        b_new = bm + k * fm
        f[m:] = f_new
        b[m:] = b_new
        ext = np.concatenate([a, [0.0]])
        a = ext + k * ext[::-1]
    if a.size < order + 1:
        a = np.concatenate([a, np.zeros(order + 1 - a.size)])
    return a


def _band_energy_fraction(x: np.ndarray, fs: float,
                          band: tuple[float, float]) -> float:
    freqs, power = _power_spectrum(x, fs)
    total = power[1:].sum()  # skip DC
    if total <= 0:
        return 0.0
    mask = (freqs >= band[0]) & (freqs <= band[1])
    return float(power[mask].sum() / total)


def estimate_respiration(trace: RgbTrace, window_length: int = HR_WINDOW,
                         order: int = AR_ORDER) -> RespEstimate:
    """Breathing rate from the green channel of a face colour trace.

    Band-pass the z-normalized green channel to 0.1..0.5 Hz, fit an AR
    model of the given order with Burg's method, and among poles whose
    angles fall inside the band select the one with the largest magnitude;
    the rate is 60 times the pole frequency. Raises NoPoleInBand when the
    band holds no meaningful energy or no pole lands inside it.
    """
    if len(trace) < window_length:
        raise WindowIncomplete(
            f"need {window_length} frames, have {len(trace)}")
    fs = trace.sample_rate
    green = _znorm(trace.samples[:window_length, 1])
    if not np.any(green):
        raise NoPoleInBand("green channel is constant")
    if _band_energy_fraction(green, fs, RESP_BAND) < 0.02:
        raise NoPoleInBand("no respiration-band energy in trace")
    sos = scipy.signal.butter(3, RESP_BAND, btype="bandpass", fs=fs,
                              output="sos")
    filtered = scipy.signal.sosfiltfilt(sos, green)
    a = burg_ar(filtered, order)
    poles = np.roots(a)
    best: tuple[float, float] | None = None
    for pole in poles:
        freq = abs(np.angle(pole)) * fs / (2.0 * np.pi)
        if RESP_BAND[0] <= freq <= RESP_BAND[1]:
            mag = float(np.abs(pole))
            if best is None or mag > best[0]:
                best = (mag, freq)
    if best is None:
        raise NoPoleInBand("no AR pole inside the respiration band")
    us_per_frame = 1_000_000.0 / fs
    return RespEstimate(
        breaths_per_minute=60.0 * best[1],
        window_start=trace.start_time,
        window_end=trace.start_time + round(window_length * us_per_frame))
