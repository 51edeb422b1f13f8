"""End-to-end runs of the full session graph with mock providers."""

import json

import pytest

from affectsense.bus import BusServer
from affectsense.context import ReplayEventSource
from affectsense.session import BUS_TOPICS, Session
from affectsense.sinks import read_rows
from affectsense.synth import SyntheticAudioSource, SyntheticVideoSource

from test_bus import WireSubscriber


def write_trace(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    return str(path)


def video_session(duration_s, **kwargs):
    return Session(duration_s=duration_s,
                   video=SyntheticVideoSource(duration_s=duration_s),
                   **kwargs)


def test_session_requires_a_source():
    with pytest.raises(ValueError):
        Session(duration_s=1.0)


def test_row_count_matches_duration():
    result = video_session(5.0).run()
    assert len(result.rows) == 5
    assert [r["window_start"] for r in result.rows] == [
        0, 1_000_000, 2_000_000, 3_000_000, 4_000_000]


def test_fractional_final_window_still_closes():
    result = video_session(2.5).run()
    assert len(result.rows) == 3
    assert result.rows[-1]["window_start"] == 2_000_000


def test_single_face_is_tracked_with_one_id():
    result = video_session(4.0).run()
    for row in result.rows:
        assert row["face_count"] == 1
        assert row["faces"][0]["id"] == 0
        assert row["faces"][0]["bbox"] == [20, 12, 24, 24]


def test_pulse_estimates_appear_after_warmup():
    result = video_session(25.0).run()
    warm = [r for r in result.rows if "hr_bpm" in r["faces"][0]]
    assert len(warm) >= 4
    for row in warm:
        assert abs(row["faces"][0]["hr_bpm"] - 72.0) < 2.0
    resp = [r["faces"][0]["resp_bpm"] for r in result.rows
            if "resp_bpm" in r["faces"][0]]
    assert resp, "no respiration estimates in a 25 s run"


def test_speech_chain_fills_audio_fields():
    session = Session(
        duration_s=4.0,
        audio=SyntheticAudioSource(duration_s=4.0,
                                   bursts=((0.5, 1.5, 200.0),)))
    rows = session.run().rows
    assert rows[0]["vad_fraction"] > 0.3
    assert rows[2]["vad_fraction"] == 0.0
    spoken = [r for r in rows if r["transcript"]]
    assert len(spoken) == 1
    assert spoken[0]["transcript"].startswith("mock-transcript-")
    pitched = [r for r in rows if "pitch_mean" in r]
    assert pitched and abs(pitched[0]["pitch_mean"] - 200.0) < 2.0
    assert "valence" in spoken[0]
    assert len(spoken[0]["language_sentiment"]) == 8


def test_replay_events_land_in_their_windows(tmp_path):
    trace = write_trace(tmp_path / "trace.ndjson", [
        {"t": 100_000, "kind": "key", "keyboard_active": True,
         "mouse_active": False, "window_time": 100_000},
        {"t": 200_000, "kind": "app", "app": "editor", "title": "notes",
         "bounds": [0, 0, 800, 600], "event": "foreground"},
        {"t": 1_200_000, "kind": "calendar", "attendees": 3,
         "start": 1_000_000, "duration": 2_000_000, "remote": True},
        {"t": 2_500_000, "kind": "email", "score": 0.75,
         "send_time": 2_500_000},
    ])
    session = Session(duration_s=4.0, events=ReplayEventSource(trace))
    rows = session.run().rows
    assert len(rows) == 4
    assert rows[0]["keyboard_active"] is True
    assert rows[0]["mouse_active"] is False
    assert len(rows[0]["app_events"]) == 1
    assert rows[0]["app_events"][0]["app"] == "editor"
    assert rows[1]["calendar_active"] is True
    assert rows[2]["calendar_active"] is True
    assert rows[3]["calendar_active"] is False
    assert rows[2]["email_scores"] == [0.75]
    assert rows[1]["email_scores"] == []
    # gap windows after the last input event report inactivity
    assert rows[3]["keyboard_active"] is False


def test_store_file_matches_collected_rows(tmp_path):
    store = tmp_path / "rows.ndjson"
    result = video_session(3.0, store_path=str(store)).run()
    assert read_rows(store) == result.rows


def test_identical_runs_write_identical_bytes(tmp_path):
    paths = [tmp_path / "a.ndjson", tmp_path / "b.ndjson"]
    for path in paths:
        session = Session(
            duration_s=6.0,
            video=SyntheticVideoSource(duration_s=6.0),
            audio=SyntheticAudioSource(duration_s=6.0),
            store_path=str(path))
        session.run()
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_completion_report_covers_all_components():
    report = video_session(2.0).run().report
    assert report.streams["video.frames"].emitted == 30
    assert report.streams["face.tracks"].emitted == 30
    assert report.streams["metrics.rows"].emitted == 2
    assert all(c.dropped == 0 for c in report.streams.values())


def test_bus_broadcasts_rows_and_component_topics():
    bus = BusServer()
    bus.start()
    session = Session(
        duration_s=3.0,
        video=SyntheticVideoSource(duration_s=3.0),
        audio=SyntheticAudioSource(duration_s=3.0),
        bus=bus)
    sub = WireSubscriber(bus.address, ["*"])
    try:
        result = session.run()
        bus.stop()
        seen = []
        while True:
            line = sub._fh.readline()
            if not line:
                break
            seen.append(json.loads(line))
    finally:
        sub.close()
    topics = {m["topic"] for m in seen}
    expected = set(BUS_TOPICS.values()) - {"context.input", "face.hr",
                                           "face.resp"}
    assert expected <= topics
    rows = [m["payload"] for m in seen if m["topic"] == "metrics.row"]
    assert rows == result.rows
    for m in seen:
        assert m["t"] >= 0
