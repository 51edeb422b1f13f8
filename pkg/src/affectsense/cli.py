"""The affectd daemon entry point and its configuration surface.

Configs are JSON with a fixed, recursively validated key set; unknown keys
fail loudly with the offending name so typos never silently disable a
subsystem. Tokens may come from the environment instead of the file.

The metrics view prints one label/value pair per line with a two-space
separator; absent values render as an em dash. It never prints pixels,
samples, or any forbidden field.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time

from .bus import BusServer
from .context import ParseError, ReplayEventSource
from .session import Session, SessionResult
from .streamcore import ComponentFailure
from .synth import (
    AUDIO_SENTINEL,
    VIDEO_SENTINEL,
    SyntheticAudioSource,
    SyntheticVideoSource,
)
from . import textsent

ABSENT = "—"

ENV_BUS_TOKEN = "AFFECTD_BUS_TOKEN"
ENV_STT_TOKEN = "AFFECTD_STT_TOKEN"

DEFAULT_CONFIG = {
    "session": {
        "duration_s": 60.0,
        "window_s": 1.0,
        "salt": "",
    },
    "video": {
        "kind": "off",
        "fps": 15.0,
        "bpm": 72.0,
        "resp_bpm": 15.0,
        "seed": 0,
        "sentinel": False,
    },
    "audio": {
        "kind": "off",
        "sample_rate": 16000,
        "bursts": [[0.5, 1.5, 200.0]],
        "seed": 0,
        "sentinel": False,
    },
    "events": {
        "replay": None,
        "speed": 1.0,
    },
    "store": {
        "path": None,
    },
    "bus": {
        "enabled": False,
        "host": "127.0.0.1",
        "port": 0,
        "token": None,
        "wait_for_subscribers": 0,
    },
    "providers": {
        "stt": {"kind": "mock", "url": None, "token": None},
        "expression": {"kind": "mock"},
        "valence": {"kind": "mock"},
    },
    "consent": False,
}

SOURCE_KINDS = {
    "video": ("off", "synthetic", "camera"),
    "audio": ("off", "synthetic", "microphone"),
}

CAPTURE_KINDS = ("camera", "microphone")


class ValidationError(ValueError):
    """A config key is unknown or carries the wrong kind of value."""

    def __init__(self, key: str, reason: str):
        super().__init__(reason)
        self.key = key


class ConsentRequired(RuntimeError):
    """Live capture was configured without explicit consent."""


class NoCaptureAdapter(RuntimeError):
    """Consent was given but no live capture backend is available."""


def _merge(defaults: dict, override: dict, path: str) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ValidationError(key, f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(key, f"{where} must be an object")
            merged[key] = _merge(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


def _check_types(config: dict) -> None:
    def expect(cond: bool, key: str, reason: str) -> None:
        if not cond:
            raise ValidationError(key, reason)

    expect(config["session"]["duration_s"] > 0,
           "duration_s", "session.duration_s must be positive")
    expect(config["session"]["window_s"] > 0,
           "window_s", "session.window_s must be positive")
    for section in ("video", "audio"):
        kind = config[section]["kind"]
        expect(kind in SOURCE_KINDS[section], "kind",
               f"{section}.kind must be one of {SOURCE_KINDS[section]}")
    expect(config["audio"]["sample_rate"] == 16000, "sample_rate",
           "only 16000 Hz capture is supported")
    replay = config["events"]["replay"]
    expect(replay is None or isinstance(replay, str), "replay",
           "events.replay must be a path string")
    expect(config["events"]["speed"] > 0,
           "speed", "events.speed must be positive")
    waiters = config["bus"]["wait_for_subscribers"]
    expect(isinstance(waiters, int) and waiters >= 0,
           "wait_for_subscribers",
           "bus.wait_for_subscribers must be a non-negative integer")
    expect(isinstance(config["consent"], bool), "consent",
           "consent must be a boolean")


def normalize_config(raw: dict) -> dict:
    """Validate a parsed config object and fill every default.

    The {"replay": <path>} shorthand is accepted at top level and expands
    to the events section. Environment variables override only tokens.
    """
    if not isinstance(raw, dict):
        raise ValidationError("config", "top level must be a JSON object")
    raw = copy.deepcopy(raw)
    if "replay" in raw:
        replay = raw.pop("replay")
        raw.setdefault("events", {}).setdefault("replay", replay)
    config = _merge(DEFAULT_CONFIG, raw, "")
    if os.environ.get(ENV_BUS_TOKEN):
        config["bus"]["token"] = os.environ[ENV_BUS_TOKEN]
    if os.environ.get(ENV_STT_TOKEN):
        config["providers"]["stt"]["token"] = os.environ[ENV_STT_TOKEN]
    _check_types(config)
    return config


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(err.lineno, err.msg) from err
    return normalize_config(raw)


# ── metrics rendering ─────────────────────────────────────────────────────


def _fmt_window(row: dict):
    if "window_start" not in row:
        return None
    return f"{row['window_start'] / 1_000_000:.3f}s"


def _primary_face(row: dict):
    faces = row.get("faces") or []
    return faces[0] if faces else None


def _fmt_probs(probs, labels):
    best = max(range(len(probs)), key=probs.__getitem__)
    return f"{labels[best]} {probs[best]:.2f}"


def render_metrics(row: dict) -> str:
    """One fixed-width text block per row; absent values show an em dash.

    Only derived metrics appear: no pixels, no samples, no free text
    beyond the transcript.
    """
    from .vision import EMOTION_CLASSES
    from .textsent import LANGUAGE_CLASSES

    face = _primary_face(row)

    def from_face(key, fmt):
        if face is None or key not in face:
            return None
        return fmt(face[key])

    def from_row(key, fmt):
        if key not in row or row[key] is None:
            return None
        return fmt(row[key])

    entries = [
        ("Window", _fmt_window(row)),
        ("Faces", from_row("face_count", str)),
        ("Expression", from_face(
            "expression", lambda p: _fmt_probs(p, EMOTION_CLASSES))),
        ("HR", from_face("hr_bpm", lambda v: f"{v:.1f} bpm")),
        ("Resp", from_face("resp_bpm", lambda v: f"{v:.1f} bpm")),
        ("VAD", from_row("vad_fraction", lambda v: f"{v:.2f}")),
        ("Transcript", from_row(
            "transcript", lambda s: repr(s) if s else None)),
        ("Pitch", from_row("pitch_mean", lambda v: f"{v:.1f} Hz")),
        ("Energy", from_row("energy_mean", lambda v: f"{v:.3f}")),
        ("Valence", from_row("valence", lambda p: _fmt_probs(
            p, ("negative", "neutral", "positive")))),
        ("Language", from_row("language_sentiment", lambda p: _fmt_probs(
            p, LANGUAGE_CLASSES))),
        ("Apps", from_row("app_events", lambda v: str(len(v)) if v else None)),
        ("Calendar", from_row(
            "calendar_active", lambda v: "busy" if v else "free")),
        ("Email", from_row("email_scores", lambda v: ", ".join(
            f"{s:.2f}" for s in v) if v else None)),
        ("Keyboard", from_row(
            "keyboard_active", lambda v: "yes" if v else "no")),
        ("Mouse", from_row("mouse_active", lambda v: "yes" if v else "no")),
    ]
    lines = ["affect metrics"]
    for label, value in entries:
        lines.append(f"{label}  {value if value is not None else ABSENT}")
    return "\n".join(lines)


# ── session assembly ──────────────────────────────────────────────────────


def _build_video(config: dict, consent: bool):
    section = config["video"]
    if section["kind"] == "off":
        return None
    if section["kind"] == "camera":
        if not consent:
            raise ConsentRequired(
                "camera capture requires --consent or consent: true")
        raise NoCaptureAdapter(
            "no camera adapter is registered in this build; use the "
            "synthetic source or replay")
    return SyntheticVideoSource(
        duration_s=config["session"]["duration_s"],
        fps=section["fps"], bpm=section["bpm"],
        resp_bpm=section["resp_bpm"], seed=section["seed"],
        sentinel=VIDEO_SENTINEL if section["sentinel"] else None)


def _build_audio(config: dict, consent: bool):
    section = config["audio"]
    if section["kind"] == "off":
        return None
    if section["kind"] == "microphone":
        if not consent:
            raise ConsentRequired(
                "microphone capture requires --consent or consent: true")
        raise NoCaptureAdapter(
            "no microphone adapter is registered in this build; use the "
            "synthetic source or replay")
    return SyntheticAudioSource(
        duration_s=config["session"]["duration_s"],
        bursts=tuple(tuple(b) for b in section["bursts"]),
        seed=section["seed"],
        sentinel=AUDIO_SENTINEL if section["sentinel"] else None)


def build_session(config: dict, *, consent: bool = False,
                  bus: BusServer | None = None, on_row=None) -> Session:
    consent = consent or config["consent"]
    video = _build_video(config, consent)
    audio = _build_audio(config, consent)
    events = None
    if config["events"]["replay"] is not None:
        events = ReplayEventSource(config["events"]["replay"],
                                   salt=config["session"]["salt"],
                                   speed=config["events"]["speed"])
    return Session(
        duration_s=config["session"]["duration_s"],
        window_s=config["session"]["window_s"],
        video=video, audio=audio, events=events,
        store_path=config["store"]["path"],
        bus=bus, on_row=on_row)


def run_session(config: dict, *, consent: bool = False,
                print_metrics: bool = False,
                out=None) -> SessionResult:
    if out is None:
        out = sys.stdout
    bus = None
    if config["bus"]["enabled"]:
        bus = BusServer(host=config["bus"]["host"],
                        port=config["bus"]["port"],
                        token=config["bus"]["token"])
        bus.start()
        # scripts parse this line to find the bound port, so flush it
        print(f"bus listening on {bus.address[0]}:{bus.address[1]}",
              file=out, flush=True)
        deadline = time.monotonic() + 30.0
        while (bus.subscriber_count() < config["bus"]["wait_for_subscribers"]
               and time.monotonic() < deadline):
            time.sleep(0.01)
    on_row = None
    if print_metrics:
        def on_row(row):
            print(render_metrics(row), file=out)
            print(file=out)
    try:
        session = build_session(config, consent=consent, bus=bus,
                                on_row=on_row)
        return session.run()
    finally:
        if bus is not None:
            bus.stop()


# ── commands ──────────────────────────────────────────────────────────────


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config)
        if args.replay is not None:
            config["events"]["replay"] = args.replay
        result = run_session(config, consent=args.consent,
                             print_metrics=args.print_metrics)
    except (ValidationError, ParseError, OSError) as err:
        print(f"affectd: config error: {err}", file=sys.stderr)
        return 2
    except (ConsentRequired, NoCaptureAdapter) as err:
        print(f"affectd: {err}", file=sys.stderr)
        return 2
    except ComponentFailure as err:
        print(f"affectd: {err}", file=sys.stderr)
        return 1
    print(f"session complete: {len(result.rows)} rows")
    if result.store_path:
        print(f"log written to {result.store_path}")
    return 0


def _cmd_train(args) -> int:
    try:
        corpus = textsent.read_corpus(args.corpus)
        features = textsent.select_features_mi(corpus, args.features)
        stoplist = (textsent.load_stoplist(args.stoplist)
                    if args.stoplist else set())
        features = textsent.prune_features(features, stoplist)
        params = textsent.TrainParams(l2_grid=tuple(args.l2),
                                      folds=args.folds, seed=args.seed)
        model = textsent.train_logistic(corpus, features, params)
        model.save(args.out)
    except (ValueError, OSError) as err:
        print(f"affectd: {err}", file=sys.stderr)
        return 2
    print(f"trained on {len(corpus)} documents, "
          f"{len(model.features)} features")
    if model.cv_accuracy is not None:
        print(f"cross-validated accuracy {model.cv_accuracy:.3f} "
              f"at l2={model.l2}")
    print(f"model written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affectd",
        description="affect-sensing pipeline daemon")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run a configured session")
    run.add_argument("--config", required=True, help="JSON config path")
    run.add_argument("--consent", action="store_true",
                     help="acknowledge live-capture consent")
    run.add_argument("--replay", default=None,
                     help="context event trace overriding the config")
    run.add_argument("--print-metrics", action="store_true",
                     help="render each metrics row to stdout")
    run.set_defaults(func=_cmd_run)

    train = commands.add_parser("train-sentiment",
                                help="fit the transcript sentiment model")
    train.add_argument("--corpus", required=True,
                       help="NDJSON corpus of {text, label} lines")
    train.add_argument("--out", required=True, help="model JSON destination")
    train.add_argument("--features", type=int, default=500,
                       help="feature count before pruning")
    train.add_argument("--stoplist", default=None,
                       help="path to a token stoplist")
    train.add_argument("--l2", type=float, nargs="+",
                       default=[0.001, 0.01, 0.1, 1.0],
                       help="regularization grid")
    train.add_argument("--folds", type=int, default=5)
    train.add_argument("--seed", type=int, default=0)
    train.set_defaults(func=_cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
