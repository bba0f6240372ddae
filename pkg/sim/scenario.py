# sim/scenario.py
"""Scenario scripts (timed stimuli) and the report a run produces."""

import json
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.dataio import dump_json
from core.errors import ScriptError
from sim.energy import US_PER_S, EnergyLedger, to_us

NODE_NAMES = ("vision", "audio", "tts")


class StimulusKind(StrEnum):
    INJECT_AUDIO = "inject_audio"
    VISUAL_EVENT = "visual_event"
    APP_PAIR_REQUEST = "app_pair_request"
    REFLASH = "reflash"
    INJECT_MESSAGE = "inject_message"
    END = "end"


class VisualKind(StrEnum):
    FACE = "face"
    GESTURE = "gesture"
    PERSON = "person"
    EMBEDDING_EXPORT = "embedding_export"


@dataclass(frozen=True)
class Stimulus:
    kind: StimulusKind
    t_us: int
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def t_s(self) -> float:
        return self.t_us / US_PER_S

    def to_dict(self) -> dict:
        return {"kind": str(self.kind), "t_us": self.t_us, **self.params}


def _stimulus_time(item: dict, index: int) -> int:
    if "t_us" in item:
        t = item["t_us"]
        if not isinstance(t, int) or isinstance(t, bool):
            raise ScriptError(f"Stimulus {index}: t_us must be an integer")
    elif "t_s" in item:
        try:
            t = to_us(item["t_s"])
        except (TypeError, ValueError):
            raise ScriptError(f"Stimulus {index}: bad t_s {item['t_s']!r}")
    else:
        raise ScriptError(f"Stimulus {index}: missing time (t_s or t_us)")
    if t < 0:
        raise ScriptError(f"Stimulus {index}: negative time")
    return t


def _check_params(kind: StimulusKind, params: dict, index: int):
    where = f"Stimulus {index} ({kind})"
    match kind:
        case StimulusKind.INJECT_AUDIO:
            if "wav" not in params and "duration_s" not in params:
                raise ScriptError(f"{where}: needs 'wav' or 'duration_s'")
            duration = params.get("duration_s", 1)
            if not isinstance(duration, (int, float)) or duration <= 0:
                raise ScriptError(f"{where}: duration_s must be positive")
        case StimulusKind.VISUAL_EVENT:
            try:
                VisualKind(params.get("event"))
            except ValueError:
                raise ScriptError(f"{where}: unknown event {params.get('event')!r}")
        case StimulusKind.REFLASH:
            if params.get("node") not in NODE_NAMES:
                raise ScriptError(f"{where}: node must be one of {NODE_NAMES}")
            if not params.get("firmware"):
                raise ScriptError(f"{where}: missing firmware name")
        case StimulusKind.INJECT_MESSAGE:
            missing = {"src", "dst", "msg_type"} - set(params)
            if missing:
                raise ScriptError(f"{where}: missing {sorted(missing)}")
            if not isinstance(params.get("fields", {}), dict):
                raise ScriptError(f"{where}: fields must be a mapping")


@dataclass
class ScenarioScript:
    """
    Ordered stimuli ending with exactly one ``end``.

    JSON form: ``{"stimuli": [{"kind": ..., "t_s": ..., ...}, ...]}`` (a bare
    list is accepted too). Times are non-decreasing.
    """

    stimuli: List[Stimulus]
    base_dir: Optional[Path] = None

    def __post_init__(self):
        if not self.stimuli or self.stimuli[-1].kind != StimulusKind.END:
            raise ScriptError("Script must finish with an 'end' stimulus")
        ends = [s for s in self.stimuli if s.kind == StimulusKind.END]
        if len(ends) != 1:
            raise ScriptError("Script must contain exactly one 'end' stimulus")
        for prev, cur in zip(self.stimuli, self.stimuli[1:]):
            if cur.t_us < prev.t_us:
                raise ScriptError(
                    f"Stimulus times must be non-decreasing: {cur.t_s} s after "
                    f"{prev.t_s} s"
                )

    @property
    def end_us(self) -> int:
        return self.stimuli[-1].t_us

    @classmethod
    def from_dict(cls, data: Any, base_dir: Optional[Path] = None) -> "ScenarioScript":
        items = data.get("stimuli") if isinstance(data, dict) else data
        if not isinstance(items, list):
            raise ScriptError("Script must be a list of stimuli")
        stimuli = []
        for i, item in enumerate(items):
            if not isinstance(item, dict):
                raise ScriptError(f"Stimulus {i} is not an object")
            try:
                kind = StimulusKind(item.get("kind"))
            except ValueError:
                raise ScriptError(f"Stimulus {i}: unknown kind {item.get('kind')!r}")
            t_us = _stimulus_time(item, i)
            params = {k: v for k, v in item.items() if k not in ("kind", "t_s", "t_us")}
            _check_params(kind, params, i)
            stimuli.append(Stimulus(kind, t_us, params))
        return cls(stimuli, base_dir)

    @classmethod
    def load_json(cls, filepath: Path) -> "ScenarioScript":
        filepath = Path(filepath)
        try:
            data = json.loads(filepath.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ScriptError(f"Script not found: {filepath}")
        except json.JSONDecodeError as e:
            raise ScriptError(f"Script {filepath} is not valid JSON: {e}")
        return cls.from_dict(data, base_dir=filepath.parent)

    def to_dict(self) -> dict:
        return {"stimuli": [s.to_dict() for s in self.stimuli]}

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


@dataclass
class ScenarioReport:
    """Everything a scenario run observed; JSON-serializable via to_dict()."""

    events: List[dict] = field(default_factory=list)
    transcripts: List[dict] = field(default_factory=list)
    responses: List[dict] = field(default_factory=list)
    actions: List[dict] = field(default_factory=list)
    energy_mj: Dict[str, float] = field(default_factory=dict)
    total_energy_mj: float = 0.0
    duration_s: float = 0.0
    average_power_mw: Optional[float] = None
    battery_life_h: Optional[float] = None
    hub_active_fraction: float = 0.0
    app_chunks: int = 0
    audit: List[dict] = field(default_factory=list)
    errors: List[dict] = field(default_factory=list)
    ledger: Optional[EnergyLedger] = field(default=None, repr=False, compare=False)

    @property
    def has_violations(self) -> bool:
        return bool(self.audit)

    def to_dict(self) -> dict:
        return {
            "events": self.events,
            "transcripts": self.transcripts,
            "responses": self.responses,
            "actions": self.actions,
            "energy_mj": self.energy_mj,
            "total_energy_mj": self.total_energy_mj,
            "duration_s": self.duration_s,
            "average_power_mw": self.average_power_mw,
            "battery_life_h": self.battery_life_h,
            "hub_active_fraction": self.hub_active_fraction,
            "app_chunks": self.app_chunks,
            "audit": self.audit,
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    def save(self, filepath: Path):
        Path(filepath).write_text(self.to_json(), encoding="utf-8")


# ===== Builders =====


def silent_script(seconds: float) -> ScenarioScript:
    """Nothing happens until the end: the hub sleeps throughout."""
    return ScenarioScript([Stimulus(StimulusKind.END, to_us(seconds))])


PLAY_UTTERANCES = (
    "hey david",
    "hello",
    "how are you",
    "look at me",
    "hey david spin",
    "what is that",
)


def default_duty_cycle_script(
    days: int = 1, play_hours: float = 1.0, play_start_h: float = 17.0
) -> ScenarioScript:
    """
    A child plays for play_hours each day; the rest of the day is quiet.

    During play the vision node sees a face every minute and twelve
    utterances are spread evenly over the session, each opening with the
    wake word.
    """
    if days < 1 or not 0 < play_hours <= 24 - play_start_h:
        raise ScriptError("Duty cycle needs days >= 1 and a play window inside the day")
    stimuli: List[Stimulus] = []
    play_s = play_hours * 3600
    faces = int(play_s // 60)
    talk_every = play_s / 12
    for day in range(days):
        start = day * 86400 + play_start_h * 3600
        timed = [
            (start + i * 60.0, 1, {"event": str(VisualKind.FACE)})
            for i in range(faces)
        ]
        for i in range(12):
            text = PLAY_UTTERANCES[i % len(PLAY_UTTERANCES)]
            if not text.startswith("hey david"):
                text = f"hey david {text}"
            timed.append(
                (
                    start + i * talk_every + 30.0,
                    0,
                    {"duration_s": 2.0, "utterance": text},
                )
            )
        for t_s, order, params in sorted(timed, key=lambda x: (x[0], x[1])):
            kind = (
                StimulusKind.INJECT_AUDIO if order == 0 else StimulusKind.VISUAL_EVENT
            )
            stimuli.append(Stimulus(kind, to_us(t_s), params))
    stimuli.append(Stimulus(StimulusKind.END, to_us(days * 86400)))
    return ScenarioScript(stimuli)
