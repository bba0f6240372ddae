# tests/test_cli.py
import json

import numpy as np
import pytest
from scipy.io import wavfile

from app.cli import main
from app.controllers import ExitCode
from core.dataio import load_model, save_model
from core.speechnet import SpeechRecognizer


def _write_script(path, stimuli, end_s=5.0):
    path.write_text(
        json.dumps({"stimuli": [*stimuli, {"kind": "end", "t_s": end_s}]}),
        encoding="utf-8",
    )
    return path


LEAK = {
    "kind": "inject_message",
    "t_s": 1.0,
    "src": "vision",
    "dst": "hub",
    "msg_type": "face_embedding",
    "fields": {"embedding": [0.1] * 128},
}


def test_unknown_command_is_a_usage_error():
    assert main(["bogus"]) == ExitCode.USAGE


def test_version_exits_cleanly():
    assert main(["--version"]) == ExitCode.OK


def test_missing_graph(tmp_path):
    assert main(["analyze", str(tmp_path / "missing.json")]) == ExitCode.ERROR


def test_analyze_saved_graph(tmp_path, conv_stack):
    graph = tmp_path / "stack.json"
    save_model(graph, conv_stack)
    out = tmp_path / "report.json"
    assert main(["analyze", str(graph), "--json", str(out)]) == ExitCode.OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["outputs"]["c1"]["receptive_field_frames"] == 5


def test_port_over_budget(tmp_path, conv_stack):
    graph = tmp_path / "stack.json"
    save_model(graph, conv_stack)
    ported = tmp_path / "ported.json"
    code = main(["port", str(graph), "--budget-mw", "1e-12", "--out", str(ported)])
    assert code == ExitCode.BUDGET
    assert not ported.exists()


def test_probe_agrees(tmp_path, conv_stack):
    graph = tmp_path / "stack.json"
    save_model(graph, conv_stack)
    assert main(["probe", str(graph), "--output-index", "3"]) == ExitCode.OK


def test_reference_export(tmp_path):
    out = tmp_path / "speechnet1.json"
    assert main(["reference", "speechnet1", "--out", str(out)]) == ExitCode.OK
    assert isinstance(load_model(out), SpeechRecognizer)


def test_tts_rejects_digits(tmp_path):
    out = tmp_path / "say.wav"
    assert main(["tts", "--text", "r2d2", "--out", str(out)]) == ExitCode.ERROR


def test_tts_durations_override(tmp_path):
    out = tmp_path / "ab.wav"
    args = ["tts", "--text", "ab", "--durations-override", "1", "--out", str(out)]
    assert main(args) == ExitCode.OK
    rate, samples = wavfile.read(out)
    assert rate == 16000
    assert samples.shape == (800,)


def test_tts_durations_override_per_character(tmp_path):
    out = tmp_path / "ab.wav"
    args = ["tts", "--text", "ab", "--durations-override", "2,1", "--out", str(out)]
    assert main(args) == ExitCode.OK
    assert wavfile.read(out)[1].shape == (1200,)


@pytest.mark.parametrize(
    "durations, code", [("1,2,3", ExitCode.ERROR), ("1,x", ExitCode.USAGE)]
)
def test_tts_bad_durations_override(tmp_path, durations, code):
    out = tmp_path / "ab.wav"
    args = ["tts", "--text", "ab", "--durations-override", durations, "--out", str(out)]
    assert main(args) == code


def test_asr_posteriors_dump_and_streaming(tmp_path, tone_wav):
    offline, streamed = tmp_path / "offline.json", tmp_path / "streamed.json"
    args = ["asr", str(tone_wav), "--posteriors-json", str(offline)]
    assert main(args) == ExitCode.OK
    code = main(
        [
            "asr",
            str(tone_wav),
            "--stream-chunk-frames",
            "7",
            "--posteriors-json",
            str(streamed),
        ]
    )
    assert code == ExitCode.OK
    first = json.loads(offline.read_text(encoding="utf-8"))
    second = json.loads(streamed.read_text(encoding="utf-8"))
    assert first["model"] == "speechnet1"
    assert first["frames"] == 39
    assert np.asarray(first["posteriors"]).shape == (39, 29)
    np.testing.assert_allclose(
        second["posteriors"], first["posteriors"], rtol=0, atol=1e-6
    )


def test_bad_script_is_an_audit_failure(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"stimuli": []}', encoding="utf-8")
    assert main(["scenario", str(path)]) == ExitCode.AUDIT


def test_privacy_violation_exit_code(tmp_path):
    script = _write_script(tmp_path / "leak.json", [LEAK])
    report = tmp_path / "report.json"
    assert main(["scenario", str(script), "--report", str(report)]) == ExitCode.AUDIT
    audit = json.loads(report.read_text(encoding="utf-8"))["audit"]
    assert [a["reason"] for a in audit] == ["privacy_violation"]


@pytest.mark.parametrize("seed", ["0", "7"])
def test_reports_are_reproducible(tmp_path, monkeypatch, seed):
    monkeypatch.setenv("DAVID_SEED", seed)
    script = _write_script(
        tmp_path / "play.json",
        [
            {"kind": "app_pair_request", "t_s": 0.5},
            {"kind": "visual_event", "t_s": 1.0, "event": "face"},
            {"kind": "visual_event", "t_s": 2.5, "event": "gesture"},
        ],
    )
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["scenario", str(script), "--report", str(first)]) == ExitCode.OK
    assert main(["scenario", str(script), "--report", str(second)]) == ExitCode.OK
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text(encoding="utf-8"))["app_chunks"] == 2


def test_scenario_plot(tmp_path):
    script = _write_script(tmp_path / "quiet.json", [], end_s=2.0)
    plot = tmp_path / "power.html"
    assert main(["scenario", str(script), "--plot", str(plot)]) == ExitCode.OK
    assert plot.exists()


def test_config_file(tmp_path):
    config = tmp_path / "david.yaml"
    config.write_text("budget:\n  power_budget_mw: 1.0e-9\n", encoding="utf-8")
    graph = tmp_path / "vision.json"
    assert main(["reference", "vision", "--out", str(graph)]) == ExitCode.OK
    code = main(["--config", str(config), "analyze", str(graph)])
    assert code == ExitCode.BUDGET
