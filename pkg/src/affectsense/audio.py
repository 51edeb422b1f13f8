"""Microphone-path processing: voice activity, segmentation, prosody.

Everything works on 16 kHz mono PCM in [-1, 1]. The voice activity
detector is a frame energy gate against an adaptive noise floor; segments
are built from the flag sequence; prosody (pitch and energy) comes from
autocorrelation over 40 ms frames. Speech-to-text and valence stay behind
provider interfaces with deterministic mocks.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .providers import ProviderUnavailable, http_post_json

SAMPLE_RATE = 16_000
VAD_FRAME = 320          # 20 ms
PROSODY_FRAME = 640      # 40 ms
PROSODY_HOP = 320        # 20 ms
PITCH_RANGE = (60.0, 400.0)
VOICING_THRESHOLD = 0.45
MARGIN_DB = 6.0
HANGOVER_MS = 250.0
# 250 ms of 20 ms frames; the integer frame count is the contract
HANGOVER_FRAMES = int(HANGOVER_MS // 20.0)
MIN_SEGMENT_S = 0.2
MAX_SEGMENT_S = 30.0
MEL_FILTERS = 26
MEL_FRAME = 400          # 25 ms


class BadFrameLength(ValueError):
    """Frame passed with the wrong number of samples."""


@dataclass
class AudioBuffer:
    """A chunk of 16 kHz mono PCM with its capture time (microseconds)."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    originating_time: int = 0

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(
                f"unsupported sample rate {self.sample_rate}; use {SAMPLE_RATE}")
        self.samples = np.asarray(self.samples, dtype=float).ravel()


@dataclass(frozen=True)
class VadFlag:
    active: bool
    frame_time: int


@dataclass
class SpeechSegment:
    samples: np.ndarray
    start_time: int
    end_time: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).ravel()
        if self.end_time <= self.start_time:
            raise ValueError("segment must span positive time")
        duration = (self.end_time - self.start_time) / 1_000_000.0
        if not (MIN_SEGMENT_S <= duration <= MAX_SEGMENT_S):
            raise ValueError(
                f"segment duration {duration:.3f}s outside "
                f"[{MIN_SEGMENT_S}, {MAX_SEGMENT_S}]s")

    @property
    def duration_s(self) -> float:
        return (self.end_time - self.start_time) / 1_000_000.0


@dataclass(frozen=True)
class ProsodyFeatures:
    """Per-frame pitch and energy; pitch_hz is None for unvoiced frames."""

    pitch_hz: float | None
    energy_rms: float
    frame_time: int


@dataclass
class ValenceScores:
    """Probabilities over (negative, neutral, positive)."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        if p.size != 3:
            raise ValueError("valence needs exactly 3 probabilities")
        if abs(p.sum() - 1.0) > 1e-3:
            raise ValueError(f"valence probabilities sum to {p.sum():.5f}")
        self.probabilities = p / p.sum()


def frame_energy_db(samples: np.ndarray) -> float:
    """Mean-power frame energy in dB; silence floors near -120 dB."""
    x = np.asarray(samples, dtype=float)
    return float(10.0 * np.log10(np.mean(x * x) + 1e-12))


class EnergyVad:
    """Adaptive energy gate over 20 ms frames.

    The noise floor is an exponential moving average of inactive-frame
    energy; a frame is raw-active when it exceeds the floor by margin_db,
    and a hangover keeps the flag up for HANGOVER_FRAMES frames after the
    last raw-active frame so trailing consonants are kept.
    """

    def __init__(self, margin_db: float = MARGIN_DB,
                 hangover_frames: int = HANGOVER_FRAMES,
                 alpha: float = 0.05):
        self.margin_db = margin_db
        self.hangover_frames = hangover_frames
        self.alpha = alpha
        self.floor_db: float | None = None
        self._hang = 0

    @staticmethod
    def raw_decision(energy_db: float, floor_db: float,
                     margin_db: float = MARGIN_DB) -> bool:
        return energy_db >= floor_db + margin_db

    def process(self, samples: np.ndarray, frame_time: int = 0) -> VadFlag:
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size != VAD_FRAME:
            raise BadFrameLength(
                f"VAD frames are {VAD_FRAME} samples, got {samples.size}")
        energy = frame_energy_db(samples)
        if self.floor_db is None:
            self.floor_db = energy
        raw = self.raw_decision(energy, self.floor_db, self.margin_db)
        if raw:
            self._hang = self.hangover_frames
            active = True
        elif self._hang > 0:
            self._hang -= 1
            active = True
        else:
            active = False
        if not raw:
            self.floor_db = ((1.0 - self.alpha) * self.floor_db
                             + self.alpha * energy)
        return VadFlag(active=active, frame_time=frame_time)


class SpeechSegmenter:
    """Builds speech segments from the (frame, flag) sequence.

    Contiguous active runs shorter than MIN_SEGMENT_S are dropped (their
    duration is tracked in dropped_short_us); runs longer than
    MAX_SEGMENT_S are split so every emitted segment is at most that long.
    """

    def __init__(self, min_s: float = MIN_SEGMENT_S,
                 max_s: float = MAX_SEGMENT_S,
                 frame_s: float = VAD_FRAME / SAMPLE_RATE):
        self.min_us = int(round(min_s * 1_000_000))
        self.max_us = int(round(max_s * 1_000_000))
        self.frame_us = int(round(frame_s * 1_000_000))
        self.dropped_short_us = 0
        self._run: list[np.ndarray] = []
        self._run_start: int | None = None

    def push(self, samples: np.ndarray, active: bool,
             frame_time: int) -> list[SpeechSegment]:
        out: list[SpeechSegment] = []
        if active:
            if self._run_start is None:
                self._run_start = frame_time
            self._run.append(np.asarray(samples, dtype=float).ravel())
            run_us = len(self._run) * self.frame_us
            if run_us >= self.max_us:
                out.append(self._emit())
                self._run_start = frame_time + self.frame_us
        elif self._run_start is not None:
            segment = self._finish()
            if segment is not None:
                out.append(segment)
        return out

    def flush(self) -> list[SpeechSegment]:
        segment = self._finish()
        return [segment] if segment is not None else []

    def _emit(self) -> SpeechSegment:
        start = self._run_start
        duration = len(self._run) * self.frame_us
        segment = SpeechSegment(np.concatenate(self._run), start,
                                start + duration)
        self._run = []
        self._run_start = None
        return segment

    def _finish(self) -> SpeechSegment | None:
        if self._run_start is None:
            return None
        duration = len(self._run) * self.frame_us
        if duration < self.min_us:
            self.dropped_short_us += duration
            self._run = []
            self._run_start = None
            return None
        return self._emit()


def extract_prosody(samples: np.ndarray, frame_time: int = 0,
                    sample_rate: int = SAMPLE_RATE) -> ProsodyFeatures:
    """Pitch and RMS energy for one 40 ms frame.

    Pitch comes from the normalized autocorrelation peak across lags for
    60..400 Hz, refined with parabolic interpolation; frames whose peak
    falls below VOICING_THRESHOLD (and silent frames) are unvoiced.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size != PROSODY_FRAME:
        raise BadFrameLength(
            f"prosody frames are {PROSODY_FRAME} samples, got {x.size}")
    energy = float(np.sqrt(np.mean(x * x)))
    if energy < 1e-8:
        return ProsodyFeatures(None, energy, frame_time)
    x = x - x.mean()
    r = np.correlate(x, x, mode="full")[x.size - 1:]
    if r[0] <= 0:
        return ProsodyFeatures(None, energy, frame_time)
    r = r / r[0]
    lag_min = int(np.ceil(sample_rate / PITCH_RANGE[1]))
    lag_max = int(np.floor(sample_rate / PITCH_RANGE[0]))
    window = r[lag_min:lag_max + 1]
    peak = int(np.argmax(window)) + lag_min
    if r[peak] < VOICING_THRESHOLD:
        return ProsodyFeatures(None, energy, frame_time)
    lag = float(peak)
    if 1 <= peak < x.size - 1:
        left, mid, right = r[peak - 1], r[peak], r[peak + 1]
        denom = left - 2.0 * mid + right
        if abs(denom) > 1e-12:
            lag = peak + 0.5 * (left - right) / denom
    pitch = sample_rate / lag
    pitch = float(np.clip(pitch, PITCH_RANGE[0], PITCH_RANGE[1]))
    return ProsodyFeatures(pitch, energy, frame_time)


def mel_filterbank(n_filters: int = MEL_FILTERS, n_fft: int = 512,
                   sample_rate: int = SAMPLE_RATE, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, each row normalized to sum to one."""
    if fmax is None:
        fmax = sample_rate / 2.0

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)

    mel_points = np.linspace(to_mel(fmin), to_mel(fmax), n_filters + 2)
    hz_points = from_mel(mel_points)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_filters, bins.size))
    for i in range(n_filters):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bins - lo) / max(center - lo, 1e-12)
        falling = (hi - bins) / max(hi - center, 1e-12)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        total = bank[i].sum()
        if total > 0:
            bank[i] /= total
    return bank


def mel_features(samples: np.ndarray, sample_rate: int = SAMPLE_RATE,
                 frame: int = MEL_FRAME, hop: int = 160,
                 bank: np.ndarray | None = None) -> np.ndarray:
    """Log mel-filterbank energies per 25 ms frame, shape (n_frames, 26)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < frame:
        raise BadFrameLength(f"need at least {frame} samples")
    if bank is None:
        bank = mel_filterbank(sample_rate=sample_rate)
    n_fft = 2 * (bank.shape[1] - 1)
    rows = []
    for start in range(0, x.size - frame + 1, hop):
        chunk = x[start:start + frame] * np.hanning(frame)
        power = np.abs(np.fft.rfft(chunk, n_fft)) ** 2
        rows.append(np.log(bank @ power + 1e-10))
    return np.asarray(rows)


class TranscriptionProvider:
    """Turns one speech segment into its single most probable string."""

    def transcribe(self, segment: SpeechSegment) -> str:
        raise NotImplementedError


class MockTranscriber(TranscriptionProvider):
    """Deterministic stand-in: names the segment by its rounded duration."""

    def transcribe(self, segment: SpeechSegment) -> str:
        ms = round((segment.end_time - segment.start_time) / 1000.0)
        return f"mock-transcript-{ms}ms"


class HttpTranscriber(TranscriptionProvider):
    """Remote speech-to-text over HTTP JSON.

    Request: {"pcm_b64": base64 float32 little-endian, "sample_rate": int}
    Response: {"text": str}
    """

    def __init__(self, endpoint: str, token: str | None = None,
                 timeout_s: float = 5.0):
        if not endpoint:
            raise ProviderUnavailable("no transcription endpoint configured")
        self.endpoint = endpoint
        self.token = token
        self.timeout_s = timeout_s

    def transcribe(self, segment: SpeechSegment) -> str:
        pcm = segment.samples.astype("<f4").tobytes()
        reply = http_post_json(
            self.endpoint,
            {"pcm_b64": base64.b64encode(pcm).decode("ascii"),
             "sample_rate": SAMPLE_RATE},
            timeout_s=self.timeout_s, token=self.token)
        text = reply.get("text")
        if not isinstance(text, str):
            raise ProviderUnavailable("transcription reply had no text field")
        return text


class ValenceProvider:
    """Maps a segment's prosody feature sequence to a valence distribution."""

    def classify(self, features: list[ProsodyFeatures]) -> ValenceScores:
        raise NotImplementedError


class MockValenceClassifier(ValenceProvider):
    """Deterministic valence from mean pitch and mean energy.

    Silence-only input (all energies zero) maps to the uniform
    distribution over the three classes.
    """

    _WEIGHTS = np.array([[-1.4, 2.0],
                         [0.2, -3.0],
                         [1.2, 1.0]])

    def classify(self, features: list[ProsodyFeatures]) -> ValenceScores:
        if not features:
            raise ValueError("need at least one prosody frame")
        energies = np.array([f.energy_rms for f in features])
        if np.all(energies == 0.0):
            return ValenceScores(np.full(3, 1.0 / 3.0))
        pitches = [f.pitch_hz for f in features if f.pitch_hz is not None]
        mean_pitch = float(np.mean(pitches)) if pitches else 0.0
        mean_energy = float(energies.mean())
        scores = self._WEIGHTS @ np.array([mean_pitch / 400.0, mean_energy])
        scores = scores - scores.max()
        probs = np.exp(scores)
        return ValenceScores(probs / probs.sum())
