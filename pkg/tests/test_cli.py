"""Config validation, metrics rendering, and the affectd entry points."""

import json

import pytest

from affectsense import cli
from affectsense.cli import (
    ABSENT,
    ValidationError,
    load_config,
    main,
    normalize_config,
    render_metrics,
)
from affectsense.context import ParseError


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def write_trace(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    return str(path)


SHORT_TRACE = [
    {"t": 100_000, "kind": "key", "keyboard_active": True,
     "mouse_active": True, "window_time": 100_000},
    {"t": 900_000, "kind": "email", "score": 0.5, "send_time": 900_000},
]


# ── config loading ────────────────────────────────────────────────────────


def test_empty_config_fills_every_default():
    config = normalize_config({})
    assert config["session"]["window_s"] == 1.0
    assert config["session"]["duration_s"] == 60.0
    assert config["video"]["fps"] == 15.0
    assert config["audio"]["sample_rate"] == 16000
    assert config["bus"]["enabled"] is False
    assert config["consent"] is False


def test_unknown_top_level_key_is_named():
    with pytest.raises(ValidationError) as exc:
        normalize_config({"fps_video": 30})
    assert exc.value.key == "fps_video"
    assert "fps_video" in str(exc.value)


def test_unknown_nested_key_is_named_with_its_path():
    with pytest.raises(ValidationError) as exc:
        normalize_config({"video": {"fps": 15, "bpms": 70}})
    assert exc.value.key == "bpms"
    assert "video.bpms" in str(exc.value)


def test_replay_shorthand_expands_to_events_section():
    config = normalize_config({"replay": "trace.ndjson"})
    assert config["events"]["replay"] == "trace.ndjson"
    assert config["session"]["window_s"] == 1.0


def test_normalization_is_idempotent():
    first = normalize_config({"session": {"duration_s": 5},
                              "video": {"kind": "synthetic"}})
    assert normalize_config(first) == first
    assert normalize_config(json.loads(json.dumps(first))) == first


def test_section_must_be_an_object():
    with pytest.raises(ValidationError):
        normalize_config({"video": "synthetic"})


@pytest.mark.parametrize("raw", [
    {"session": {"duration_s": 0}},
    {"session": {"window_s": -1}},
    {"video": {"kind": "webcam"}},
    {"audio": {"kind": "line-in"}},
    {"audio": {"sample_rate": 44100}},
    {"events": {"speed": 0}},
    {"bus": {"wait_for_subscribers": -1}},
    {"bus": {"wait_for_subscribers": 1.5}},
    {"consent": "yes"},
])
def test_bad_values_are_rejected(raw):
    with pytest.raises(ValidationError):
        normalize_config(raw)


def test_env_overrides_reach_only_tokens(monkeypatch):
    monkeypatch.setenv("AFFECTD_BUS_TOKEN", "sesame")
    monkeypatch.setenv("AFFECTD_STT_TOKEN", "tok-stt")
    config = normalize_config({"bus": {"token": "from-file"}})
    assert config["bus"]["token"] == "sesame"
    assert config["providers"]["stt"]["token"] == "tok-stt"
    assert config["session"]["duration_s"] == 60.0


def test_invalid_json_reports_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "session": {,}\n}\n', encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        load_config(str(path))
    assert exc.value.line_no == 2


# ── metrics rendering ─────────────────────────────────────────────────────


def test_empty_row_renders_all_dashes():
    lines = render_metrics({}).splitlines()
    assert lines[0] == "affect metrics"
    assert len(lines) > 10
    for line in lines[1:]:
        label, sep, value = line.partition("  ")
        assert sep == "  "
        assert value == ABSENT


def test_heart_rate_line_format_is_exact():
    row = {"window_start": 0, "face_count": 1,
           "faces": [{"id": 0, "bbox": [1, 2, 3, 4], "hr_bpm": 72.0}]}
    assert "HR  72.0 bpm" in render_metrics(row).splitlines()


def test_full_row_renders_every_metric():
    row = {
        "window_start": 3_000_000,
        "face_count": 1,
        "faces": [{"id": 0, "bbox": [20, 12, 24, 24],
                   "expression": [0.0] * 4 + [1.0] + [0.0] * 3,
                   "hr_bpm": 68.25, "resp_bpm": 14.9}],
        "vad_fraction": 0.5,
        "transcript": "mock-transcript-1000ms",
        "pitch_mean": 199.96, "energy_mean": 0.2121,
        "valence": [0.1, 0.2, 0.7],
        "language_sentiment": [0.125] * 8,
        "app_events": [{"app": "editor", "title_hash": "aa", "bounds":
                        [0, 0, 1, 1], "event": "foreground"}],
        "calendar_active": True,
        "email_scores": [0.25, 0.75],
        "keyboard_active": True, "mouse_active": False,
    }
    text = render_metrics(row)
    assert "Window  3.000s" in text
    assert "HR  68.2 bpm" in text or "HR  68.3 bpm" in text
    assert "Resp  14.9 bpm" in text
    assert "VAD  0.50" in text
    assert "Pitch  200.0 Hz" in text
    assert "Valence  positive 0.70" in text
    assert "Calendar  busy" in text
    assert "Email  0.25, 0.75" in text
    assert "Keyboard  yes" in text
    assert "Mouse  no" in text
    assert ABSENT not in text


def test_renderer_ignores_raw_capture_fields():
    row = {"window_start": 0, "pixels": b"\x00" * 64,
           "samples": [0.0] * 320, "email_body": "secret"}
    text = render_metrics(row)
    for name in ("pixels", "samples", "email_body", "secret"):
        assert name not in text


# ── affectd run ───────────────────────────────────────────────────────────


def test_run_synthetic_session(tmp_path, capsys):
    store = tmp_path / "rows.ndjson"
    config = write_json(tmp_path / "c.json", {
        "session": {"duration_s": 2.0},
        "video": {"kind": "synthetic"},
        "store": {"path": str(store)},
    })
    assert main(["run", "--config", config]) == 0
    out = capsys.readouterr().out
    assert "session complete: 2 rows" in out
    assert store.read_text().count("\n") == 2


def test_run_print_metrics_renders_rows(tmp_path, capsys):
    config = write_json(tmp_path / "c.json", {
        "session": {"duration_s": 1.0},
        "video": {"kind": "synthetic"},
    })
    assert main(["run", "--config", config, "--print-metrics"]) == 0
    out = capsys.readouterr().out
    assert out.count("affect metrics") == 1
    assert "Faces  1" in out


def test_run_rejects_bad_config(tmp_path, capsys):
    config = write_json(tmp_path / "c.json", {"fps_video": 30})
    assert main(["run", "--config", config]) == 2
    assert "fps_video" in capsys.readouterr().err


def test_run_missing_config_file(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert main(["run", "--config", missing]) == 2
    assert "config error" in capsys.readouterr().err


def test_camera_needs_consent_then_an_adapter(tmp_path, capsys):
    config = write_json(tmp_path / "c.json", {"video": {"kind": "camera"}})
    assert main(["run", "--config", config]) == 2
    assert "consent" in capsys.readouterr().err
    assert main(["run", "--config", config, "--consent"]) == 2
    assert "no camera adapter" in capsys.readouterr().err


def test_consent_from_config_passes_the_gate(tmp_path, capsys):
    config = write_json(tmp_path / "c.json", {
        "audio": {"kind": "microphone"}, "consent": True})
    assert main(["run", "--config", config]) == 2
    assert "no microphone adapter" in capsys.readouterr().err


def test_replay_needs_no_consent(tmp_path, capsys):
    trace = write_trace(tmp_path / "t.ndjson", SHORT_TRACE)
    config = write_json(tmp_path / "c.json",
                        {"replay": trace, "session": {"duration_s": 1.0}})
    assert main(["run", "--config", config]) == 0
    assert "session complete: 1 rows" in capsys.readouterr().out


def test_replay_flag_overrides_the_config(tmp_path, capsys):
    trace = write_trace(tmp_path / "t.ndjson", SHORT_TRACE)
    config = write_json(tmp_path / "c.json",
                        {"session": {"duration_s": 1.0},
                         "video": {"kind": "synthetic"}})
    assert main(["run", "--config", config, "--replay", trace]) == 0
    capsys.readouterr()


def test_run_reports_replay_parse_errors(tmp_path, capsys):
    trace = tmp_path / "t.ndjson"
    trace.write_text('{"t": 0, "kind": "key"}\nnot json\n', encoding="utf-8")
    config = write_json(tmp_path / "c.json", {"replay": str(trace)})
    assert main(["run", "--config", config]) == 2
    assert "line 2" in capsys.readouterr().err


# ── affectd train-sentiment ───────────────────────────────────────────────


@pytest.fixture
def corpus(tmp_path):
    docs = []
    for i in range(24):
        good = i % 2 == 0
        text = ("great wonderful session today"
                if good else "awful broken session today")
        docs.append({"text": f"{text} {i}", "label":
                     "pos" if good else "neg"})
    return write_trace(tmp_path / "corpus.ndjson", docs)


def test_train_sentiment_writes_a_model(tmp_path, corpus, capsys):
    out = tmp_path / "model.json"
    code = main(["train-sentiment", "--corpus", corpus,
                 "--out", str(out), "--features", "10"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "trained on 24 documents" in stdout
    assert "cross-validated accuracy" in stdout
    model = json.loads(out.read_text())
    assert sorted(model) == ["bias", "features", "weights"]
    assert len(model["features"]) == len(model["weights"]) == 10


def test_train_single_lambda_skips_cross_validation(tmp_path, corpus,
                                                    capsys):
    out = tmp_path / "model.json"
    code = main(["train-sentiment", "--corpus", corpus, "--out", str(out),
                 "--features", "10", "--l2", "0.01"])
    assert code == 0
    assert "cross-validated" not in capsys.readouterr().out


def test_train_rejects_malformed_corpus(tmp_path, capsys):
    bad = tmp_path / "corpus.ndjson"
    bad.write_text('{"text": "fine", "label": "pos"}\n{"text": "no label"}\n',
                   encoding="utf-8")
    code = main(["train-sentiment", "--corpus", str(bad),
                 "--out", str(tmp_path / "m.json")])
    assert code == 2
    assert "line 2" in capsys.readouterr().err
