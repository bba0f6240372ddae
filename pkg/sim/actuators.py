# sim/actuators.py
"""Embodiment actuators: action table, FIFO queues per actuator, energy."""

from dataclasses import dataclass, replace
from enum import StrEnum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional

from core.errors import ConfigError, UnsupportedAction
from sim.energy import NJ_PER_MJ, US_PER_S, EnergyLedger, PowerState, to_us
from utils.logger import logger

ACTUATOR_DEVICE = "actuators"


class Embodiment(StrEnum):
    TEDDY = "teddy"
    ROVER = "rover"


class Actuator(StrEnum):
    BASE = "base"
    HEAD = "head"
    ANTENNAE = "antennae"
    EYES = "eyes"


@dataclass(frozen=True)
class ActionSpec:
    name: str
    actuator: Actuator
    duration_s: float
    power_mw: float

    def __post_init__(self):
        if self.duration_s <= 0 or self.power_mw < 0:
            raise ConfigError(f"Action {self.name}: bad duration or power")


DEFAULT_ACTIONS: Dict[str, ActionSpec] = {
    spec.name: spec
    for spec in (
        ActionSpec("rotate_180", Actuator.BASE, 1.5, 800.0),
        ActionSpec("rotate_360", Actuator.BASE, 3.0, 800.0),
        ActionSpec("nod", Actuator.HEAD, 0.6, 150.0),
        ActionSpec("antennae_happy", Actuator.ANTENNAE, 0.8, 100.0),
        ActionSpec("antennae_confused", Actuator.ANTENNAE, 0.8, 100.0),
        ActionSpec("eyes_follow", Actuator.EYES, 0.5, 20.0),
    )
}

# The bear only moves its eyes; the rover has a base, head and antennae too
EMBODIMENT_ACTIONS: Dict[Embodiment, frozenset] = {
    Embodiment.TEDDY: frozenset({"eyes_follow"}),
    Embodiment.ROVER: frozenset(DEFAULT_ACTIONS),
}


@dataclass(frozen=True)
class ActuatorEntry:
    """One executed action: requested at t_request_us, run over [start, end)."""

    action: str
    actuator: Actuator
    t_request_us: int
    start_us: int
    end_us: int
    power_mw: float

    @property
    def energy_mj(self) -> float:
        nj = Fraction(self.power_mw) * (self.end_us - self.start_us)
        return float(nj / NJ_PER_MJ)

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "actuator": str(self.actuator),
            "t_s": self.t_request_us / US_PER_S,
            "start_s": self.start_us / US_PER_S,
            "end_s": self.end_us / US_PER_S,
            "duration_s": (self.end_us - self.start_us) / US_PER_S,
            "power_mw": self.power_mw,
            "energy_mj": self.energy_mj,
        }


class ActuatorBank:
    """
    Actions available to one embodiment.

    Each actuator runs one action at a time; a request on a busy actuator
    starts when the previous one ends.
    """

    def __init__(
        self,
        embodiment: str = Embodiment.ROVER,
        overrides: Optional[Mapping[str, Mapping[str, float]]] = None,
    ):
        try:
            self.embodiment = Embodiment(embodiment)
        except ValueError:
            raise ConfigError(f"Unknown embodiment '{embodiment}'")
        self.actions = dict(DEFAULT_ACTIONS)
        for name, values in (overrides or {}).items():
            if name not in self.actions:
                raise ConfigError(f"Override for unknown action '{name}'")
            try:
                self.actions[name] = replace(self.actions[name], **values)
            except TypeError as e:
                raise ConfigError(f"Bad override for {name}: {e}")
        self.entries: List[ActuatorEntry] = []
        self._busy_until: Dict[Actuator, int] = {}

    @property
    def supported(self) -> List[str]:
        return sorted(EMBODIMENT_ACTIONS[self.embodiment])

    def dispatch_action(self, action: str, t_us: int) -> ActuatorEntry:
        if action not in EMBODIMENT_ACTIONS[self.embodiment]:
            raise UnsupportedAction(f"{self.embodiment} cannot perform '{action}'")
        spec = self.actions[action]
        start = max(t_us, self._busy_until.get(spec.actuator, 0))
        end = start + to_us(spec.duration_s)
        self._busy_until[spec.actuator] = end
        entry = ActuatorEntry(action, spec.actuator, t_us, start, end, spec.power_mw)
        self.entries.append(entry)
        logger.info(f"Actuator {spec.actuator}: {action} {start}-{end} us")
        return entry

    def flush(self, ledger: EnergyLedger, end_us: Optional[int] = None):
        """Record every entry on the ledger, clipped at end_us."""
        for entry in self.entries:
            stop = entry.end_us if end_us is None else min(entry.end_us, end_us)
            if stop > entry.start_us:
                ledger.record(
                    ACTUATOR_DEVICE,
                    PowerState.ACTUATING,
                    entry.power_mw,
                    entry.start_us,
                    stop,
                )
