"""Synthetic camera and microphone feeds for replay and testing.

The video source draws a single bright marker whose color carries a
cardiac sinusoid, so the full face-detection → tracking → pulse path runs
without hardware. The audio source alternates tone bursts with near
silence to exercise the VAD and prosody path. Both accept a sentinel byte
pattern planted in the raw data; the privacy checks scan every persisted
and broadcast byte for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import SAMPLE_RATE as AUDIO_RATE
from .audio import VAD_FRAME, AudioBuffer
from .streamcore import StreamDescriptor
from .vision import VideoFrame

VIDEO_STREAM = StreamDescriptor("video.frames", "video_frame")
AUDIO_STREAM = StreamDescriptor("audio.buffers", "audio_buffer")

# distinctive patterns that must never escape into logs or bus payloads
VIDEO_SENTINEL = bytes((0xDE, 0xAD, 0xBE, 0xEF, 0xCA, 0xFE, 0xF0, 0x0D))
AUDIO_SENTINEL = np.array([0.6180339887, -0.2718281828, 0.4142135623,
                           -0.5772156649], dtype=np.float64)


@dataclass
class SyntheticVideoSource:
    """15 FPS frames of a pulsing marker on a black background.

    The marker's mean color oscillates at the configured heart rate with
    per-channel gains, plus seeded pixel noise, matching what a skin patch
    looks like to the pulse estimator after spatial averaging.
    """

    duration_s: float = 4.0
    fps: float = 15.0
    bpm: float = 72.0
    resp_bpm: float = 15.0
    size: tuple[int, int] = (48, 64)
    marker: tuple[int, int, int, int] = (20, 12, 24, 24)
    base_color: tuple[int, int, int] = (150, 120, 110)
    pulse_gains: tuple[float, float, float] = (2.4, 6.0, 1.8)
    resp_gains: tuple[float, float, float] = (0.8, 2.2, 0.6)
    noise_sd: float = 0.8
    seed: int = 0
    sentinel: bytes | None = None
    descriptor: StreamDescriptor = field(default=VIDEO_STREAM)

    def frame_count(self) -> int:
        return int(round(self.duration_s * self.fps))

    def frames(self):
        """Yields (descriptor, VideoFrame, originating_time) tuples."""
        rng = np.random.default_rng(self.seed)
        height, width = self.size
        x, y, w, h = self.marker
        omega = 2.0 * np.pi * self.bpm / 60.0
        omega_resp = 2.0 * np.pi * self.resp_bpm / 60.0
        for i in range(self.frame_count()):
            t_s = i / self.fps
            pixels = np.zeros((height, width, 3), dtype=np.uint8)
            pulse = np.sin(omega * t_s)
            breath = np.sin(omega_resp * t_s)
            color = np.array(self.base_color, dtype=float)
            color += np.array(self.pulse_gains) * pulse
            color += np.array(self.resp_gains) * breath
            patch = color + rng.normal(0.0, self.noise_sd, size=(h, w, 3))
            pixels[y:y + h, x:x + w] = np.clip(np.rint(patch), 1, 255)
            if self.sentinel is not None:
                flat = pixels.reshape(-1)
                flat[:len(self.sentinel)] = np.frombuffer(self.sentinel,
                                                          dtype=np.uint8)
            t = int(round(i * 1e6 / self.fps))
            yield self.descriptor, VideoFrame(width, height, pixels, t), t


@dataclass
class SyntheticAudioSource:
    """20 ms buffers alternating tone bursts with near-silent noise.

    bursts is a list of (start_s, end_s, frequency_hz) spans; inside them
    the signal is a loud sine, outside it is faint seeded noise, so an
    energy VAD sees unambiguous activity edges.
    """

    duration_s: float = 4.0
    bursts: tuple = ((0.5, 1.5, 200.0),)
    tone_amplitude: float = 0.3
    noise_amplitude: float = 0.001
    seed: int = 0
    sentinel: np.ndarray | None = None
    descriptor: StreamDescriptor = field(default=AUDIO_STREAM)

    def buffer_count(self) -> int:
        return int(round(self.duration_s * AUDIO_RATE)) // VAD_FRAME

    def buffers(self):
        """Yields (descriptor, AudioBuffer, originating_time) tuples."""
        rng = np.random.default_rng(self.seed)
        for i in range(self.buffer_count()):
            start = i * VAD_FRAME
            times = (start + np.arange(VAD_FRAME)) / AUDIO_RATE
            samples = rng.normal(0.0, self.noise_amplitude, size=VAD_FRAME)
            for begin, end, freq in self.bursts:
                mask = (times >= begin) & (times < end)
                samples[mask] += self.tone_amplitude * np.sin(
                    2.0 * np.pi * freq * times[mask])
            if self.sentinel is not None and i == 0:
                samples[:len(self.sentinel)] = self.sentinel
            t = int(round(start * 1e6 / AUDIO_RATE))
            yield self.descriptor, AudioBuffer(samples, AUDIO_RATE, t), t
