# tests/test_sim.py
from fractions import Fraction

import pytest

from app.config import HubConfig, PlatformConfig
from core.errors import (
    ConfigError,
    FlashCapacityExceeded,
    ScriptError,
    UnsupportedAction,
    ZeroCapacity,
    ZeroPower,
)
from core.plotting import PlottingUtils, hex_to_rgba, step_series
from core.privacy import MsgType
from sim.actuators import ActuatorBank
from sim.energy import EnergyLedger, PowerState, battery_life, to_us
from sim.firmware import FirmwareStore
from sim.nodes import flash_duration_us
from sim.platform import FirmwareCatalog, Platform, run_scenario
from sim.scenario import (
    ScenarioScript,
    StimulusKind,
    default_duty_cycle_script,
    silent_script,
)


def _script(*stimuli, end_s=10.0):
    return ScenarioScript.from_dict(
        {"stimuli": [*stimuli, {"kind": "end", "t_s": end_s}]}
    )


def _events(report, event):
    return [e for e in report.events if e["event"] == event]


GREETING = {
    "kind": "inject_audio",
    "t_s": 2.0,
    "duration_s": 1.0,
    "utterance": "hey david hello",
}


# ===== Energy =====


def test_to_us_rounds_to_nearest():
    assert to_us(0.1) == 100_000
    assert to_us(Fraction(1, 3)) == 333_333
    assert to_us(Fraction(1, 2_000_000)) == 1


def test_ledger_sums_exact_intervals():
    ledger = EnergyLedger()
    ledger.set_state("hub", PowerState.SLEEP, 0.5, 0)
    ledger.set_state("hub", PowerState.ACTIVE, 50.0, 1_000_000)
    ledger.close(3_000_000)
    assert ledger.energy_nj("hub") == Fraction(500_000) + Fraction(100_000_000)
    assert ledger.time_in_state_us("hub", PowerState.ACTIVE) == 2_000_000
    assert ledger.average_power_mw() == pytest.approx(100.5 / 3)


def test_ledger_rejects_going_back_in_time():
    ledger = EnergyLedger()
    ledger.set_state("audio", PowerState.IDLE, 2.0, 10)
    with pytest.raises(ConfigError):
        ledger.set_state("audio", PowerState.ACTIVE, 30.0, 5)


def test_ledger_frames():
    ledger = EnergyLedger()
    ledger.record("actuators", PowerState.ACTUATING, 150.0, 0, 600_000)
    ledger.record("actuators", PowerState.ACTUATING, 150.0, 600_000, 1_200_000)
    frame = ledger.to_frame()
    assert list(frame.columns) == [
        "device",
        "state",
        "start_s",
        "end_s",
        "power_mw",
        "energy_mj",
    ]
    assert frame["energy_mj"].sum() == pytest.approx(180.0)
    summary = ledger.summary_frame()
    assert summary.loc[0, "time_s"] == pytest.approx(1.2)


def test_battery_life():
    assert battery_life(44.048, 7.4) == pytest.approx(168.0, abs=0.01)
    with pytest.raises(ZeroPower):
        battery_life(0.0, 7.4)
    with pytest.raises(ZeroCapacity):
        battery_life(10.0, 0.0)
    with pytest.raises(ZeroPower):
        EnergyLedger().average_power_mw()


# ===== Actuators =====


def test_same_actuator_queues():
    bank = ActuatorBank("rover")
    first = bank.dispatch_action("nod", 0)
    second = bank.dispatch_action("nod", 100_000)
    assert (first.start_us, first.end_us) == (0, 600_000)
    assert second.start_us == 600_000
    assert second.to_dict()["t_s"] == pytest.approx(0.1)


def test_different_actuators_run_together():
    bank = ActuatorBank("rover")
    bank.dispatch_action("rotate_360", 0)
    eyes = bank.dispatch_action("eyes_follow", 0)
    assert eyes.start_us == 0
    assert bank.entries[0].end_us == 3_000_000


def test_teddy_cannot_turn():
    bank = ActuatorBank("teddy")
    assert bank.supported == ["eyes_follow"]
    with pytest.raises(UnsupportedAction):
        bank.dispatch_action("rotate_360", 0)


def test_actuator_configuration_errors():
    with pytest.raises(ConfigError):
        ActuatorBank("robot")
    with pytest.raises(ConfigError):
        ActuatorBank("rover", {"dance": {"duration_s": 1.0}})


def test_action_overrides_change_energy():
    bank = ActuatorBank("rover", {"nod": {"power_mw": 300.0}})
    entry = bank.dispatch_action("nod", 0)
    assert entry.energy_mj == pytest.approx(180.0)
    ledger = EnergyLedger()
    bank.flush(ledger, end_us=300_000)
    assert ledger.energy_mj("actuators") == pytest.approx(90.0)


# ===== Scripts =====


def test_script_times_in_microseconds():
    script = _script(GREETING, end_s=5.5)
    assert [s.t_us for s in script.stimuli] == [2_000_000, 5_500_000]
    assert script.end_us == 5_500_000
    assert script.stimuli[0].kind == StimulusKind.INJECT_AUDIO


@pytest.mark.parametrize(
    "stimuli",
    [
        [{"kind": "visual_event", "t_s": 1.0, "event": "face"}],
        [{"kind": "end", "t_s": 2.0}, {"kind": "end", "t_s": 3.0}],
        [{"kind": "wave", "t_s": 0.0}, {"kind": "end", "t_s": 1.0}],
        [{"kind": "visual_event", "t_s": 2.0, "event": "cat"}, {"kind": "end"}],
        [{"kind": "reflash", "t_s": 0, "node": "hub"}, {"kind": "end", "t_s": 1}],
        [{"kind": "inject_audio", "t_s": 0}, {"kind": "end", "t_s": 1}],
        [{"kind": "inject_audio", "t_s": 2, "wav": "a.wav"}, {"kind": "end", "t_s": 0}],
    ],
)
def test_malformed_scripts(stimuli):
    with pytest.raises(ScriptError):
        ScenarioScript.from_dict({"stimuli": stimuli})


def test_missing_script_file(tmp_path):
    with pytest.raises(ScriptError):
        ScenarioScript.load_json(tmp_path / "nope.json")


def test_duty_cycle_script_shape():
    script = default_duty_cycle_script(days=2)
    kinds = [s.kind for s in script.stimuli]
    assert kinds.count(StimulusKind.INJECT_AUDIO) == 24
    assert kinds.count(StimulusKind.VISUAL_EVENT) == 120
    assert script.end_us == to_us(2 * 86400)


# ===== Firmware =====


def test_flash_duration_rounds_up():
    assert flash_duration_us(2_000_000, 100_000_000) == 20_000
    assert flash_duration_us(1, 3) == 333_334


def test_flash_store_capacity(catalog):
    store = FirmwareStore(3_000_000)
    store.add(catalog.get("speechnet1"))
    store.add(catalog.get("speechnet1"))
    with pytest.raises(FlashCapacityExceeded):
        store.add(catalog.get("speechnet2"))
    assert store.names() == ["speechnet1"]


def test_speechnet1_firmware_latency(catalog):
    assert catalog.get("speechnet1").latency_us() == 1_300_000


# ===== Platform =====


def test_silent_hour_keeps_hub_asleep(catalog):
    report = run_scenario(silent_script(3600), catalog=catalog)
    assert report.ledger.energy_nj("hub") == Fraction(1_800_000_000)
    assert report.energy_mj["hub"] == 1800.0
    assert report.hub_active_fraction == 0.0
    assert report.audit == []
    assert report.average_power_mw == pytest.approx(0.5 + 3 * 2.0)


def test_wake_word_wakes_hub_after_asr_latency(catalog):
    report = run_scenario(_script(GREETING, end_s=20.0), catalog=catalog)
    (wake,) = _events(report, "wake")
    assert wake["device"] == "hub"
    assert wake["t_us"] == 3_300_000
    assert report.transcripts[0]["t_s"] == pytest.approx(3.3)
    assert report.transcripts[0]["text"] == "hey david hello"
    (intent,) = _events(report, "intent")
    assert intent["intent"] == "greet"
    assert intent["response"] == "hello friend"
    assert [a["action"] for a in report.actions] == ["nod"]
    assert report.actions[0]["start_s"] == pytest.approx(3.3)
    assert report.hub_active_fraction > 0


def test_transcript_without_wake_word_is_ignored(catalog):
    quiet = dict(GREETING, utterance="hello")
    report = run_scenario(_script(quiet), catalog=catalog)
    assert _events(report, "wake") == []
    assert len(_events(report, "transcript_ignored")) == 1
    assert report.actions == []


def test_recorded_audio_goes_through_asr(catalog, tone_wav):
    stimulus = {"kind": "inject_audio", "t_s": 1.0, "wav": str(tone_wav)}
    report = run_scenario(_script(stimulus), catalog=catalog)
    (transcript,) = report.transcripts
    assert transcript["model"] == "speechnet1"
    assert transcript["t_s"] == pytest.approx(2.3)
    assert 0.0 <= transcript["confidence"] <= 1.0


def test_audio_follows_configured_sample_rate(tone_wav):
    config = PlatformConfig.from_dict(
        {"features": {"sample_rate_hz": 8000, "fmax_hz": 4000.0}}
    )
    catalog = FirmwareCatalog(config)
    recognizer = catalog.get("speechnet1").model
    assert recognizer.config.features.sample_rate_hz == 8000
    silence = {"kind": "inject_audio", "t_s": 1.0, "duration_s": 1.0}
    recorded = {"kind": "inject_audio", "t_s": 4.0, "wav": str(tone_wav)}
    report = run_scenario(_script(silence, recorded), config, catalog)
    assert report.errors == []
    assert [t["t_s"] for t in report.transcripts] == pytest.approx([2.3, 5.3])


def test_reflash_timing(catalog):
    stimulus = {"kind": "reflash", "t_s": 1, "node": "audio", "firmware": "speechnet1"}
    report = run_scenario(_script(stimulus), catalog=catalog)
    (start,) = _events(report, "reflash_start")
    (done,) = _events(report, "reflash_done")
    assert start["t_us"] == 1_000_000
    assert start["duration_us"] == 20_000
    assert done["t_us"] == 1_020_000
    assert report.ledger.time_in_state_us("audio", PowerState.FLASHING) == 20_000


def test_second_reflash_while_flashing_is_busy(catalog):
    flash = {"kind": "reflash", "t_s": 1.0, "node": "audio", "firmware": "speechnet2"}
    report = run_scenario(_script(flash, flash), catalog=catalog)
    assert len(_events(report, "reflash_done")) == 1
    assert report.errors[0]["error"] == "Busy"
    assert report.errors[0]["source"] == "reflash"


def test_stimuli_dropped_while_flashing(catalog):
    flash = {"kind": "reflash", "t_s": 1.0, "node": "audio", "firmware": "speechnet2"}
    audio = dict(GREETING, t_s=1.01)
    report = run_scenario(_script(flash, audio), catalog=catalog)
    (dropped,) = _events(report, "stimulus_dropped")
    assert dropped["reason"] == "flashing"
    assert report.transcripts == []


def test_reflashed_model_serves_next_utterance(catalog):
    flash = {"kind": "reflash", "t_s": 0.5, "node": "audio", "firmware": "speechnet2"}
    audio = dict(GREETING, t_s=1.0, duration_s=0.5)
    report = run_scenario(_script(flash, audio), catalog=catalog)
    assert report.transcripts[0]["model"] == "speechnet2"


def test_wrong_role_firmware_drops_stimulus(catalog):
    flash = {"kind": "reflash", "t_s": 0.5, "node": "audio", "firmware": "tts"}
    audio = dict(GREETING, t_s=1.0)
    report = run_scenario(_script(flash, audio), catalog=catalog)
    assert report.transcripts == []
    assert "tts_speaker" in _events(report, "stimulus_dropped")[0]["reason"]


def test_face_embedding_export_is_audited(catalog):
    stimulus = {"kind": "visual_event", "t_s": 1.0, "event": "embedding_export"}
    platform = Platform(catalog=catalog)
    report = platform.run(_script(stimulus))
    assert [a["reason"] for a in report.audit] == ["privacy_violation"]
    assert report.has_violations
    delivered = [d.msg.msg_type for _, d in platform.bus.delivered]
    assert MsgType.FACE_EMBEDDING not in delivered


def test_injected_pid_message_is_audited(catalog):
    stimulus = {
        "kind": "inject_message",
        "t_s": 1.0,
        "src": "vision",
        "dst": "hub",
        "msg_type": "face_embedding",
        "fields": {"embedding": [0.1] * 128},
    }
    platform = Platform(catalog=catalog)
    report = platform.run(_script(stimulus))
    (entry,) = report.audit
    assert entry["reason"] == "privacy_violation"
    assert entry["t_us"] == 1_000_000
    assert len(_events(report, "egress_denied")) == 1
    delivered = [d.msg.msg_type for _, d in platform.bus.delivered]
    assert MsgType.FACE_EMBEDDING not in delivered


def test_paired_app_receives_stream(catalog):
    pair = {"kind": "app_pair_request", "t_s": 1.0}
    face = {"kind": "visual_event", "t_s": 2.0, "event": "face"}
    report = run_scenario(_script(pair, face), catalog=catalog)
    assert len(_events(report, "paired")) == 1
    assert report.app_chunks == 1
    assert report.audit == []


def test_unpaired_vision_does_not_stream(catalog):
    face = {"kind": "visual_event", "t_s": 2.0, "event": "face"}
    report = run_scenario(_script(face), catalog=catalog)
    assert report.app_chunks == 0
    assert len(_events(report, "analytics")) == 1


def test_unsupported_action_is_logged(catalog):
    config = PlatformConfig(embodiment="teddy")
    spin = dict(GREETING, utterance="hey david spin")
    report = run_scenario(_script(spin), config=config, catalog=catalog)
    assert report.actions == []
    assert report.errors[0]["error"] == "UnsupportedAction"


def test_hub_falls_asleep_after_timeout(catalog):
    config = PlatformConfig(hub=HubConfig(idle_timeout_s=5.0))
    script = _script(GREETING, end_s=60.0)
    report = run_scenario(script, config=config, catalog=catalog)
    (sleep,) = _events(report, "sleep")
    assert sleep["t_us"] > 3_300_000 + 5_000_000 - 1
    assert 0 < report.hub_active_fraction < 1


def test_platform_runs_once(catalog):
    platform = Platform(catalog=catalog)
    platform.run(silent_script(1))
    with pytest.raises(ConfigError):
        platform.run(silent_script(1))


def test_runs_are_deterministic(catalog):
    script = _script(
        GREETING,
        {"kind": "app_pair_request", "t_s": 4.0},
        {"kind": "visual_event", "t_s": 5.0, "event": "person"},
        {"kind": "visual_event", "t_s": 6.0, "event": "gesture"},
    )
    first = Platform(catalog=catalog).run(script).to_json()
    second = Platform(catalog=catalog).run(script).to_json()
    assert first == second


def test_one_day_duty_cycle_outlasts_a_week(catalog):
    report = run_scenario(default_duty_cycle_script(days=1), catalog=catalog)
    assert report.battery_life_h > 168
    assert report.hub_active_fraction < 0.10
    assert len(report.transcripts) == 12


# ===== Plotting =====


def test_power_trace_steps_to_zero_in_gaps():
    ledger = EnergyLedger()
    ledger.record("actuators", PowerState.ACTUATING, 150.0, 0, 500_000)
    ledger.record("actuators", PowerState.ACTUATING, 800.0, 1_000_000, 2_000_000)
    xs, ys = step_series(ledger.to_frame())
    assert xs == [0.0, 0.5, 0.5, 1.0, 1.0, 2.0]
    assert ys == [150.0, 150.0, 0.0, 0.0, 800.0, 800.0]


def test_power_timeline_has_a_row_per_device(catalog):
    report = run_scenario(silent_script(2), catalog=catalog)
    fig = PlottingUtils.power_timeline(report.ledger.to_frame(), title="quiet")
    assert sorted(trace.name for trace in fig.data) == ["audio", "hub", "tts", "vision"]
    assert hex_to_rgba("#FF5733", 0.5) == "rgba(255, 87, 51, 0.5)"
