"""Contextual event ingestion: app windows, calendar, email, input activity.

Live OS hooks sit behind the same surface as the file-replay source; only
replay ships here, reading one NDJSON object per line of the form
{"t": <microseconds>, "kind": "app|calendar|email|key|mouse", ...}.

Privacy rules are applied at the edge: window titles are reduced to salted
hashes and email bodies to scores before any event object is constructed,
so no value leaving this module carries free-form user text.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .streamcore import NonMonotonicTimestamp, StreamDescriptor

WINDOW_EVENTS = ("start", "close", "minimize", "maximize", "foreground")

INPUT_WINDOW_US = 1_000_000

STREAM_DESCRIPTORS = {
    "app": StreamDescriptor("context.app", "app_event"),
    "calendar": StreamDescriptor("context.calendar", "calendar_event"),
    "email": StreamDescriptor("context.email", "email_score"),
    "key": StreamDescriptor("context.key", "raw_event"),
    "mouse": StreamDescriptor("context.mouse", "raw_event"),
}


class ParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


def hash_title(title: str, salt: str) -> str:
    """Salted, truncated digest; the same title maps to the same hash."""
    digest = hashlib.sha256(f"{salt}\x00{title}".encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class AppEvent:
    app_name: str
    window_title_hash: str
    bounds: tuple[int, int, int, int]
    event: str

    def __post_init__(self):
        if self.event not in WINDOW_EVENTS:
            raise ValueError(f"unknown window event {self.event!r}")
        if len(self.bounds) != 4:
            raise ValueError("bounds must be (x, y, w, h)")


@dataclass(frozen=True)
class CalendarEvent:
    attendee_count: int
    start_time: int
    duration: int
    is_remote: bool

    def __post_init__(self):
        if self.attendee_count < 1:
            raise ValueError("attendee_count must be at least 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


@dataclass(frozen=True)
class EmailSendEvent:
    sentiment_score: float
    send_time: int

    def __post_init__(self):
        if not 0.0 <= self.sentiment_score <= 1.0:
            raise ValueError("sentiment_score must lie in [0, 1]")


@dataclass(frozen=True)
class InputActivity:
    keyboard_active: bool
    mouse_active: bool
    window_time: int


def _parse_app(obj: dict, salt: str) -> AppEvent:
    if "title_hash" in obj:
        title_hash = str(obj["title_hash"])
    else:
        title_hash = hash_title(str(obj["title"]), salt)
    bounds = obj.get("bounds", (0, 0, 0, 0))
    return AppEvent(app_name=str(obj["app"]),
                    window_title_hash=title_hash,
                    bounds=tuple(int(v) for v in bounds),
                    event=str(obj["event"]))


def _parse_calendar(obj: dict, t: int) -> CalendarEvent:
    return CalendarEvent(attendee_count=int(obj["attendees"]),
                         start_time=int(obj.get("start", t)),
                         duration=int(obj["duration"]),
                         is_remote=bool(obj.get("remote", False)))


def _parse_email(obj: dict, t: int, scorer) -> EmailSendEvent:
    if "score" in obj:
        score = float(obj["score"])
    elif "body" in obj:
        if scorer is None:
            raise ValueError(
                "email line carries a body but no scorer was provided; "
                "precompute a \"score\" field instead")
        score = float(scorer(str(obj["body"])))
    else:
        raise KeyError("score")
    return EmailSendEvent(sentiment_score=score, send_time=t)


class ReplayEventSource:
    """Deterministic replay of a recorded NDJSON event log.

    Events are parsed eagerly so malformed input fails at construction
    with the offending line number. Timestamps must be globally
    non-decreasing across the file. The speed multiplier only affects
    wall-clock pacing in live playback; originating times are always the
    recorded ones, so replays are reproducible regardless of speed.
    """

    def __init__(self, path, salt: str = "", speed: float = 1.0,
                 email_scorer=None):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.speed = speed
        self.descriptors = dict(STREAM_DESCRIPTORS)
        self._events: list[tuple[StreamDescriptor, object, int]] = []
        last_t = None
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    t = int(obj["t"])
                    kind = obj["kind"]
                    if kind == "app":
                        payload = _parse_app(obj, salt)
                    elif kind == "calendar":
                        payload = _parse_calendar(obj, t)
                    elif kind == "email":
                        payload = _parse_email(obj, t, email_scorer)
                    elif kind in ("key", "mouse"):
                        payload = kind
                    else:
                        raise ValueError(f"unknown kind {kind!r}")
                except (json.JSONDecodeError, KeyError, TypeError,
                        ValueError) as err:
                    if isinstance(err, KeyError):
                        reason = f"missing field {err.args[0]!r}"
                    else:
                        reason = str(err)
                    raise ParseError(line_no, reason) from err
                if last_t is not None and t < last_t:
                    raise NonMonotonicTimestamp(
                        f"line {line_no}: t={t} after t={last_t}")
                last_t = t
                self._events.append((self.descriptors[kind], payload, t))

    def __len__(self) -> int:
        return len(self._events)

    def events(self):
        """All events as (descriptor, payload, originating_time) tuples."""
        return iter(self._events)

    def paced_events(self, sleep):
        """Like events(), sleeping the inter-event gap divided by speed."""
        previous = None
        for desc, payload, t in self._events:
            if previous is not None and t > previous:
                sleep((t - previous) / 1e6 / self.speed)
            previous = t
            yield desc, payload, t

    def span(self) -> tuple[int, int] | None:
        if not self._events:
            return None
        return self._events[0][2], self._events[-1][2]


def summarize_input(events, span: tuple[int, int],
                    window_us: int = INPUT_WINDOW_US) -> list[InputActivity]:
    """One InputActivity per half-open window covering [span[0], span[1]).

    events: iterable of (kind, originating_time) with kind "key"/"mouse".
    Windows are aligned to multiples of window_us, so an event lands in
    exactly one window. Only occurrence is recorded, never content.
    """
    start, end = span
    if end <= start:
        raise ValueError("span must be non-empty")
    first = start // window_us
    last = (end - 1) // window_us
    keyboard = [False] * (last - first + 1)
    mouse = [False] * (last - first + 1)
    for kind, t in events:
        slot = t // window_us - first
        if slot < 0 or slot >= len(keyboard):
            continue
        if kind == "key":
            keyboard[slot] = True
        elif kind == "mouse":
            mouse[slot] = True
        else:
            raise ValueError(f"unknown input kind {kind!r}")
    return [InputActivity(keyboard[i], mouse[i], (first + i) * window_us)
            for i in range(len(keyboard))]


class InputSummarizer:
    """Streaming form of summarize_input for pipeline use.

    push() returns the summaries of every window that closed strictly
    before the new event's window; flush(end_time) closes the rest. All
    windows from the first observed one onward are reported, including
    empty ones, to keep the output cadence regular.
    """

    def __init__(self, window_us: int = INPUT_WINDOW_US):
        self.window_us = window_us
        self._current: int | None = None
        self._keyboard = False
        self._mouse = False

    def _close_through(self, slot: int) -> list[InputActivity]:
        out = []
        while self._current is not None and self._current < slot:
            out.append(InputActivity(self._keyboard, self._mouse,
                                     self._current * self.window_us))
            self._current += 1
            self._keyboard = self._mouse = False
        return out

    def push(self, kind: str, t: int) -> list[InputActivity]:
        slot = t // self.window_us
        if self._current is None:
            self._current = slot
        out = self._close_through(slot)
        if kind == "key":
            self._keyboard = True
        elif kind == "mouse":
            self._mouse = True
        else:
            raise ValueError(f"unknown input kind {kind!r}")
        return out

    def flush(self, end_time: int) -> list[InputActivity]:
        if self._current is None:
            return []
        last = (end_time - 1) // self.window_us if end_time > 0 else 0
        return self._close_through(last + 1)
