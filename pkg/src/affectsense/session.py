"""Wires sources, analysis components, and sinks into one running graph.

The graph mirrors the capability map: video frames feed detection and
tracking, tracks join back onto frames for expression and pulse analysis,
audio buffers feed the VAD/segmentation/speech chain, the context replay
streams feed the input summarizer, and everything lands in the per-window
row aggregator whose rows go to the store, the bus, and the console.

Every subscription on the analysis paths is lossless so a replayed
session produces the same log byte for byte on every run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import audio as audiomod
from . import physiology, vision
from .bus import BusServer
from .context import InputSummarizer, ReplayEventSource
from .sinks import RowAggregator, RowStore
from .streamcore import CompletionReport, Pipeline, StreamDescriptor
from .textsent import LexiconSentiment

HR_MIN_SNR = 0.0

# pipeline stream -> aggregator group
AGGREGATOR_GROUPS = {
    "face.state": "faces",
    "face.hr": "hr",
    "face.resp": "resp",
    "audio.vad": "vad",
    "audio.transcript": "transcript",
    "audio.language": "language",
    "audio.prosody": "prosody",
    "audio.valence": "valence",
    "context.app": "app",
    "context.calendar": "calendar",
    "context.email": "email",
    "context.input": "input",
}

# pipeline stream -> bus topic
BUS_TOPICS = {
    "face.state": "face.expression",
    "face.hr": "face.hr",
    "face.resp": "face.resp",
    "audio.vad": "audio.vad",
    "audio.transcript": "audio.transcript",
    "audio.prosody": "audio.prosody",
    "audio.valence": "audio.valence",
    "audio.language": "audio.language",
    "context.input": "context.input",
    "metrics.rows": "metrics.row",
}


@dataclass
class Providers:
    """The pluggable analysis backends; mocks keep sessions deterministic."""

    detector: vision.FaceDetector = field(
        default_factory=vision.MarkerFaceDetector)
    expression: vision.ExpressionProvider = field(
        default_factory=vision.MockExpressionClassifier)
    transcriber: audiomod.TranscriptionProvider = field(
        default_factory=audiomod.MockTranscriber)
    valence: audiomod.ValenceProvider = field(
        default_factory=audiomod.MockValenceClassifier)
    language: LexiconSentiment = field(default_factory=LexiconSentiment)


@dataclass
class SessionResult:
    report: CompletionReport
    rows: list[dict]
    store_path: str | None
    bus_address: tuple[str, int] | None


def _bus_payload(stream_name: str, payload, t: int):
    if stream_name == "face.state":
        return {"id": payload["id"], "bbox": list(payload["bbox"]),
                "expression": [float(p) for p in payload["expression"]]}
    if stream_name in ("face.hr", "face.resp"):
        return {"id": payload["id"], "bpm": payload["bpm"]}
    if stream_name == "audio.vad":
        return {"active": bool(payload)}
    if stream_name == "audio.transcript":
        return {"text": payload}
    if stream_name == "audio.prosody":
        return {"pitch_hz": payload.pitch_hz,
                "energy_rms": payload.energy_rms}
    if stream_name in ("audio.valence", "audio.language"):
        return {"probs": [float(p) for p in payload.probabilities]}
    if stream_name == "context.input":
        return {"keyboard": payload.keyboard_active,
                "mouse": payload.mouse_active}
    if stream_name == "metrics.rows":
        return payload
    raise ValueError(f"no bus encoding for stream {stream_name!r}")


class _FaceAnalysis:
    """Expression plus per-track pulse and respiration over paired input."""

    def __init__(self, pipeline, providers: Providers, state_out, hr_out,
                 resp_out, fps: float, hr_window: int, hr_hop: int):
        self.pipeline = pipeline
        self.providers = providers
        self.state_out = state_out
        self.hr_out = hr_out
        self.resp_out = resp_out
        self.fps = fps
        self.hr_window = hr_window
        self.hr_hop = hr_hop
        self._traces: dict[int, list] = {}

    def on_pair(self, pair, t: int) -> None:
        tracks, frame = pair
        for track in tracks:
            patch = vision.crop(frame, track.detection.bbox)
            scores = self.providers.expression.classify(patch)
            self.pipeline.emit(self.state_out, {
                "id": track.id,
                "bbox": track.detection.bbox,
                "expression": scores.probabilities,
            }, t)
            self._extend_trace(track, frame, t)

    def _extend_trace(self, track, frame, t: int) -> None:
        mean_rgb = physiology.spatial_average(frame, track.detection.bbox)
        trace = self._traces.setdefault(track.id, [])
        trace.append((t, mean_rgb))
        if len(trace) < self.hr_window:
            return
        samples = np.array([rgb for _, rgb in trace])
        rgb_trace = physiology.RgbTrace(samples, sample_rate=self.fps,
                                        start_time=trace[0][0])
        try:
            est = physiology.estimate_hr(rgb_trace, self.hr_window)
            if est.snr >= HR_MIN_SNR:
                self.pipeline.emit(self.hr_out,
                                   {"id": track.id, "bpm": est.bpm}, t)
        except (physiology.ConvergenceFailure, ValueError):
            pass
        try:
            resp = physiology.estimate_respiration(rgb_trace, self.hr_window)
            self.pipeline.emit(
                self.resp_out,
                {"id": track.id, "bpm": resp.breaths_per_minute}, t)
        except (physiology.NoPoleInBand, ValueError):
            pass
        del trace[:self.hr_hop]


class _SpeechAnalysis:
    """Transcript, prosody, valence, and language scores per segment."""

    def __init__(self, pipeline, providers: Providers, transcript_out,
                 prosody_out, valence_out, language_out):
        self.pipeline = pipeline
        self.providers = providers
        self.transcript_out = transcript_out
        self.prosody_out = prosody_out
        self.valence_out = valence_out
        self.language_out = language_out

    def on_segment(self, segment, t: int) -> None:
        feats = self._prosody(segment)
        for feat in feats:
            self.pipeline.emit(self.prosody_out, feat, feat.frame_time)
        text = self.providers.transcriber.transcribe(segment)
        self.pipeline.emit(self.transcript_out, text, segment.end_time)
        if feats:
            valence = self.providers.valence.classify(feats)
            self.pipeline.emit(self.valence_out, valence, segment.end_time)
        language = self.providers.language.classify(text)
        self.pipeline.emit(self.language_out, language, segment.end_time)

    @staticmethod
    def _prosody(segment):
        frame = audiomod.PROSODY_FRAME
        hop = audiomod.PROSODY_HOP
        us_per_sample = 1_000_000.0 / audiomod.SAMPLE_RATE
        feats = []
        for start in range(0, len(segment.samples) - frame + 1, hop):
            frame_time = segment.start_time + round(start * us_per_sample)
            feats.append(audiomod.extract_prosody(
                segment.samples[start:start + frame], frame_time))
        return feats


class Session:
    """One configured run of the full pipeline.

    Passing a started BusServer broadcasts component outputs live; the
    session registers its topics on it. store_path appends metrics rows
    as NDJSON. on_row sees each row as it closes (the console view).
    """

    def __init__(self, *, duration_s: float,
                 video=None, audio=None,
                 events: ReplayEventSource | None = None,
                 providers: Providers | None = None,
                 window_s: float = 1.0,
                 store_path=None,
                 bus: BusServer | None = None,
                 on_row=None,
                 hr_window: int = physiology.HR_WINDOW,
                 hr_hop: int = physiology.HR_HOP):
        if duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if video is None and audio is None and events is None:
            raise ValueError("session needs at least one source")
        self.duration_us = round(duration_s * 1_000_000)
        self.window_us = round(window_s * 1_000_000)
        self.video = video
        self.audio = audio
        self.events = events
        self.providers = providers or Providers()
        self.store_path = store_path
        self.bus = bus
        self.on_row = on_row
        self.hr_window = hr_window
        self.hr_hop = hr_hop

    def run(self) -> SessionResult:
        pipeline = Pipeline()
        streams: dict[str, StreamDescriptor] = {}

        def stream(name: str, kind: str) -> StreamDescriptor:
            streams[name] = pipeline.create_stream(name, kind)
            return streams[name]

        rows_out = stream("metrics.rows", "metrics_row")

        if self.video is not None:
            self._wire_video(pipeline, stream)
        if self.audio is not None:
            self._wire_audio(pipeline, stream)
        if self.events is not None:
            self._wire_events(pipeline, stream)

        collected = self._wire_aggregator(pipeline, streams, rows_out)
        store = self._wire_sinks(pipeline, streams, rows_out)
        try:
            report = pipeline.run(end_time=self.duration_us)
        finally:
            if store is not None:
                store.close()
        return SessionResult(
            report=report, rows=[row for row, _ in collected],
            store_path=self.store_path,
            bus_address=self.bus.address if self.bus is not None else None)

    # ── per-modality wiring ─────────────────────────────────────────────

    def _wire_video(self, pipeline, stream) -> None:
        frames = stream("video.frames", "video_frame")
        tracks_out = stream("face.tracks", "face_tracks")
        state_out = stream("face.state", "emotion_scores")
        hr_out = stream("face.hr", "hr_estimate")
        resp_out = stream("face.resp", "resp_estimate")
        pipeline.add_source("camera", self.video.frames(), outputs=[frames])

        detector = self.providers.detector
        tracker = vision.FaceTracker()

        def on_frame(frame, t):
            detections = detector.detect(frame)
            pipeline.emit(tracks_out, tracker.update(detections), t)

        pipeline.attach("detector", {frames: on_frame},
                        outputs=[tracks_out], capacity=None)
        paired = pipeline.join(tracks_out, frames, tolerance=0,
                               name="face.paired")
        analysis = _FaceAnalysis(pipeline, self.providers, state_out,
                                 hr_out, resp_out,
                                 fps=self.video.fps,
                                 hr_window=self.hr_window,
                                 hr_hop=self.hr_hop)
        pipeline.attach("faceanalysis", {paired: analysis.on_pair},
                        outputs=[state_out, hr_out, resp_out],
                        capacity=None)

    def _wire_audio(self, pipeline, stream) -> None:
        buffers = stream("audio.buffers", "audio_buffer")
        vad_out = stream("audio.vad", "vad_flag")
        segments_out = stream("audio.segments", "speech_segment")
        transcript_out = stream("audio.transcript", "transcript")
        prosody_out = stream("audio.prosody", "prosody")
        valence_out = stream("audio.valence", "valence")
        language_out = stream("audio.language", "language_sentiment")
        pipeline.add_source("microphone", self.audio.buffers(),
                            outputs=[buffers])

        vad = audiomod.EnergyVad()

        def on_buffer(buf, t):
            pipeline.emit(vad_out, vad.process(buf.samples, t).active, t)

        pipeline.attach("vad", {buffers: on_buffer}, outputs=[vad_out],
                        capacity=None)

        flagged = pipeline.join(buffers, vad_out, tolerance=0,
                                name="audio.flagged")
        segmenter = audiomod.SpeechSegmenter()

        def on_flagged(pair, t):
            buf, active = pair
            for segment in segmenter.push(buf.samples, active, t):
                pipeline.emit(segments_out, segment, segment.end_time)

        def flush_segments(end_time):
            for segment in segmenter.flush():
                pipeline.emit(segments_out, segment, segment.end_time)

        pipeline.attach("segmenter", {flagged: on_flagged},
                        outputs=[segments_out], flush=flush_segments,
                        capacity=None)

        speech = _SpeechAnalysis(pipeline, self.providers, transcript_out,
                                 prosody_out, valence_out, language_out)
        pipeline.attach("speech", {segments_out: speech.on_segment},
                        outputs=[transcript_out, prosody_out, valence_out,
                                 language_out],
                        capacity=None)

    def _wire_events(self, pipeline, stream) -> None:
        for desc in self.events.descriptors.values():
            stream(desc.name, desc.payload_kind)
        input_out = stream("context.input", "input_activity")
        pipeline.add_source("events", self.events.events(),
                            outputs=list(self.events.descriptors.values()))

        summarizer = InputSummarizer(self.window_us)

        def on_raw(kind):
            def handler(_payload, t):
                for summary in summarizer.push(kind, t):
                    pipeline.emit(input_out, summary, summary.window_time)
            return handler

        def flush_input(end_time):
            for summary in summarizer.flush(end_time or self.duration_us):
                pipeline.emit(input_out, summary, summary.window_time)

        pipeline.attach("inputsum",
                        {self.events.descriptors["key"]: on_raw("key"),
                         self.events.descriptors["mouse"]: on_raw("mouse")},
                        outputs=[input_out], flush=flush_input,
                        capacity=None)

    def _wire_aggregator(self, pipeline, streams, rows_out):
        wired = {name: group for name, group in AGGREGATOR_GROUPS.items()
                 if name in streams}
        aggregator = RowAggregator(registered=set(wired.values()),
                                   window_us=self.window_us)

        def emit_rows(rows):
            for row in rows:
                pipeline.emit(rows_out, row, row["window_start"])

        def on_entry(group):
            return lambda payload, t: emit_rows(
                aggregator.push(group, payload, t))

        def on_closed(desc):
            emit_rows(aggregator.mark_done(wired[desc.name]))

        def flush(end_time):
            emit_rows(aggregator.flush(end_time or self.duration_us))

        pipeline.attach("aggregator",
                        {streams[name]: on_entry(group)
                         for name, group in wired.items()},
                        outputs=[rows_out], flush=flush,
                        on_input_closed=on_closed, capacity=None)
        return pipeline.collect(rows_out, name="rowcollect")

    def _wire_sinks(self, pipeline, streams, rows_out):
        store = None
        if self.store_path is not None:
            store = RowStore(self.store_path)
            pipeline.subscribe(rows_out,
                               lambda row, t: store.append(row),
                               name="store", capacity=None)
        if self.bus is not None:
            for name, topic in BUS_TOPICS.items():
                if name not in streams:
                    continue
                self.bus.register_topic(topic)
                pipeline.subscribe(
                    streams[name],
                    (lambda nm, tp: lambda payload, t: self.bus.publish(
                        tp, _bus_payload(nm, payload, t), t))(name, topic),
                    name=f"bus:{topic}", capacity=None)
        if self.on_row is not None:
            pipeline.subscribe(rows_out,
                               lambda row, t: self.on_row(row),
                               name="console", capacity=None)
        return store
