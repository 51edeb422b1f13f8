"""Aggregation into per-window metrics rows and append-only persistence.

A row is a plain JSON-ready dict so the store, the bus, and tests all see
the same shape. Field presence follows the wiring: a field appears iff its
source group is registered with the aggregator, and the optional analytics
fields (hr_bpm, resp_bpm, language_sentiment, pitch_mean, energy_mean,
valence) additionally require data in the window.

Every row passes sanitize() before leaving the process; the forbidden-key
set and the binary-blob rule enforce the no-raw-data storage contract.
"""

from __future__ import annotations

import errno
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import providers

WINDOW_US = 1_000_000

FORBIDDEN_FIELDS = frozenset({
    "pixels", "samples", "email_body", "email_subject", "window_title",
    "attendee_names",
})

# field groups the aggregator understands, in row-schema order
GROUPS = ("faces", "hr", "resp", "vad", "transcript", "language",
          "prosody", "valence", "app", "calendar", "email", "input")


class SanitizeViolation(ValueError):
    """A candidate row carried raw data or a forbidden field."""


class StorageFull(OSError):
    """The row store's device rejected an append."""


def _is_binary(value) -> bool:
    return isinstance(value, (bytes, bytearray, memoryview))


_REMOVED = object()


def sanitize(row: dict, mode: str = "strict") -> dict:
    """Reject (strict) or strip (permissive) forbidden keys and blobs.

    Recurses through nested dicts and lists. Clean rows come back as a
    structurally identical copy.
    """
    if mode not in ("strict", "permissive"):
        raise ValueError(f"unknown sanitize mode {mode!r}")
    strict = mode == "strict"

    def walk(value, path):
        if _is_binary(value):
            if strict:
                raise SanitizeViolation(f"binary value at {path}")
            return _REMOVED
        if isinstance(value, dict):
            out = {}
            for key, child in value.items():
                if key in FORBIDDEN_FIELDS:
                    if strict:
                        raise SanitizeViolation(f"forbidden field {key!r}")
                    continue
                cleaned = walk(child, f"{path}.{key}")
                if cleaned is not _REMOVED:
                    out[key] = cleaned
            return out
        if isinstance(value, (list, tuple)):
            cleaned = (walk(v, f"{path}[{i}]") for i, v in enumerate(value))
            return [v for v in cleaned if v is not _REMOVED]
        return value

    result = walk(row, "$")
    return {} if result is _REMOVED else result


def overlaps(interval: tuple[int, int], window_start: int,
             window_us: int) -> bool:
    start, end = interval
    return start < window_start + window_us and end > window_start


def _mean(values):
    return float(sum(values) / len(values))


def _aggregate_faces(face_entries, hr_entries, resp_entries):
    by_id: dict[int, list] = {}
    for _, record in face_entries:
        by_id.setdefault(int(record["id"]), []).append(record)
    hr_by_id: dict[int, list[float]] = {}
    for _, record in hr_entries:
        hr_by_id.setdefault(int(record["id"]), []).append(float(record["bpm"]))
    resp_by_id: dict[int, list[float]] = {}
    for _, record in resp_entries:
        resp_by_id.setdefault(int(record["id"]), []).append(
            float(record["bpm"]))

    faces = []
    for face_id, records in by_id.items():
        bbox = np.mean([record["bbox"] for record in records], axis=0)
        expression = np.mean([record["expression"] for record in records],
                             axis=0)
        entry = {"id": face_id,
                 "bbox": [int(round(v)) for v in bbox],
                 "expression": [float(p) for p in expression]}
        if face_id in hr_by_id:
            entry["hr_bpm"] = _mean(hr_by_id[face_id])
        if face_id in resp_by_id:
            entry["resp_bpm"] = _mean(resp_by_id[face_id])
        faces.append(entry)
    faces.sort(key=lambda e: (-(e["bbox"][2] * e["bbox"][3]), e["id"]))
    return faces


def aggregate_row(window_start: int, contents: dict, *,
                  window_us: int = WINDOW_US,
                  registered=None,
                  calendar_intervals=()) -> dict:
    """Fold one window of per-stream entries into a metrics row.

    contents maps group name to a list of (originating_time, value)
    entries; see GROUPS. Numeric groups are arithmetic-mean'd, transcripts
    are appended in time order with single spaces, booleans use any-true.
    """
    registered = set(GROUPS) if registered is None else set(registered)
    unknown = set(contents) - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown groups {sorted(unknown)}")

    def entries(group):
        return sorted(contents.get(group, ()), key=lambda e: e[0])

    row: dict = {"window_start": int(window_start)}

    if "faces" in registered:
        faces = _aggregate_faces(entries("faces"), entries("hr"),
                                 entries("resp"))
        row["face_count"] = len(faces)
        row["faces"] = faces
    if "vad" in registered:
        flags = [bool(v) for _, v in entries("vad")]
        row["vad_fraction"] = _mean(flags) if flags else 0.0
    if "transcript" in registered:
        row["transcript"] = " ".join(str(v) for _, v in entries("transcript"))
    if "language" in registered:
        dists = [getattr(v, "probabilities", v)
                 for _, v in entries("language")]
        if dists:
            row["language_sentiment"] = [
                float(p) for p in np.mean(dists, axis=0)]
    if "prosody" in registered:
        feats = [v for _, v in entries("prosody")]
        pitches = [f.pitch_hz for f in feats if f.pitch_hz is not None]
        if pitches:
            row["pitch_mean"] = _mean(pitches)
        if feats:
            row["energy_mean"] = _mean([f.energy_rms for f in feats])
    if "valence" in registered:
        dists = [getattr(v, "probabilities", v)
                 for _, v in entries("valence")]
        if dists:
            row["valence"] = [float(p) for p in np.mean(dists, axis=0)]
    if "app" in registered:
        row["app_events"] = [
            {"app": e.app_name, "title_hash": e.window_title_hash,
             "bounds": list(e.bounds), "event": e.event}
            for _, e in entries("app")]
    if "calendar" in registered:
        row["calendar_active"] = any(
            overlaps(iv, window_start, window_us)
            for iv in calendar_intervals)
    if "email" in registered:
        row["email_scores"] = [float(getattr(v, "sentiment_score", v))
                               for _, v in entries("email")]
    if "input" in registered:
        summaries = [v for _, v in entries("input")]
        row["keyboard_active"] = any(s.keyboard_active for s in summaries)
        row["mouse_active"] = any(s.mouse_active for s in summaries)
    return row


class RowAggregator:
    """Streaming aggregation over fixed windows with a min-watermark.

    Each registered group feeds push(); a window closes once every group
    still producing has advanced past its end (a closed input stream stops
    holding the watermark back via mark_done). flush(end_time) closes the
    remaining windows so a session of T seconds yields ceil(T / window)
    rows, empty windows included.
    """

    def __init__(self, registered, window_us: int = WINDOW_US,
                 start: int = 0):
        unknown = set(registered) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown groups {sorted(unknown)}")
        self.registered = set(registered)
        self.window_us = window_us
        self.start = start
        self._next_start = start
        self._buckets: dict[int, dict[str, list]] = {}
        self._intervals: list[tuple[int, int]] = []
        self._last_t: dict[str, int | None] = {
            g: None for g in self.registered}
        self._done: set[str] = set()

    def push(self, group: str, payload, t: int) -> list[dict]:
        if group not in self.registered:
            raise ValueError(f"group {group!r} not registered")
        if group in self._done:
            raise ValueError(f"group {group!r} already marked done")
        if t < self._next_start:
            raise ValueError(
                f"late {group} entry at t={t}; window already closed")
        if group == "calendar":
            self._intervals.append(
                (payload.start_time, payload.start_time + payload.duration))
        else:
            index = (t - self.start) // self.window_us
            bucket = self._buckets.setdefault(index, {})
            bucket.setdefault(group, []).append((t, payload))
        self._last_t[group] = t
        return self._drain()

    def mark_done(self, group: str) -> list[dict]:
        self._done.add(group)
        return self._drain()

    def _watermark(self) -> int | None:
        live = [g for g in self.registered if g not in self._done]
        if not live:
            return None
        times = [self._last_t[g] for g in live]
        if any(t is None for t in times):
            return self.start
        return min(times)

    def _drain(self) -> list[dict]:
        watermark = self._watermark()
        rows = []
        if watermark is None:
            return rows
        while self._next_start + self.window_us <= watermark:
            rows.append(self._close_window())
        return rows

    def _close_window(self) -> dict:
        index = (self._next_start - self.start) // self.window_us
        contents = self._buckets.pop(index, {})
        row = aggregate_row(self._next_start, contents,
                            window_us=self.window_us,
                            registered=self.registered,
                            calendar_intervals=self._intervals)
        self._next_start += self.window_us
        return row

    def flush(self, end_time: int) -> list[dict]:
        rows = []
        while self._next_start < end_time or self._buckets:
            rows.append(self._close_window())
        return rows


class RowStore:
    """Append-only NDJSON session log with strictly ordered windows.

    Serialization uses sorted keys and compact separators so identical
    rows produce identical bytes, which keeps replay logs comparable.
    """

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")
        self._last_window: int | None = None
        self.rows_written = 0

    def append(self, row: dict) -> None:
        clean = sanitize(row, mode="strict")
        window_start = clean.get("window_start")
        if window_start is None:
            raise ValueError("row lacks window_start")
        if self._last_window is not None and window_start <= self._last_window:
            raise ValueError(
                f"window_start {window_start} not after {self._last_window}")
        line = json.dumps(clean, sort_keys=True,
                          separators=(",", ":")) + "\n"
        try:
            self._fh.write(line)
        except OSError as err:
            if err.errno == errno.ENOSPC:
                raise StorageFull(err.errno, str(err)) from err
            raise
        self._last_window = window_start
        self.rows_written += 1

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_rows(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class HttpRowSink:
    """Posts each row to a remote collector; token comes from the caller.

    Drop-in alternative to RowStore for hosted storage. Failures raise the
    provider errors so the session can surface them instead of silently
    losing rows.
    """

    def __init__(self, url: str, token: str | None = None, post=None):
        self.url = url
        self.token = token
        self._post = post or providers.http_post_json
        self._last_window: int | None = None
        self.rows_written = 0

    def append(self, row: dict) -> None:
        clean = sanitize(row, mode="strict")
        window_start = clean.get("window_start")
        if self._last_window is not None and window_start <= self._last_window:
            raise ValueError("rows must be appended in window order")
        self._post(self.url, clean, token=self.token)
        self._last_window = window_start
        self.rows_written += 1

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass
