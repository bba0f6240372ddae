# sim/nodes.py
"""Sensor nodes and the hub as simpy processes."""

import math
import re
from enum import StrEnum
from typing import Callable, Dict, List, Optional

import simpy

from app.config import HubConfig, PowerConfig
from core.errors import Busy
from core.privacy import DeviceId, Message, MsgType
from sim.energy import US_PER_S, EnergyLedger, PowerState, to_us
from sim.firmware import Firmware, FirmwareStore
from utils.logger import logger

# (source device, destination device, message) -> delivered?
SendFn = Callable[[Message, int, int], bool]
# (device, event, details)
LogFn = Callable[[str, str, dict], None]


class NodeState(StrEnum):
    IDLE = "idle"
    ACTIVE = "active"
    FLASHING = "flashing"


def flash_duration_us(size_bytes: int, bandwidth_bytes_per_s: int) -> int:
    """Time to write an image, rounded up to whole microseconds."""
    return -(-size_bytes * US_PER_S // bandwidth_bytes_per_s)


class NodeSim:
    """
    One sensor node: the running firmware, its flash store and power state.

    Jobs (inference runs and re-flashes) queue on a single-slot resource, so
    the node is in exactly one state at a time. While a flash is pending or in
    progress the node drops inbound stimuli.
    """

    def __init__(
        self,
        env: simpy.Environment,
        name: str,
        device: DeviceId,
        firmware: Firmware,
        power: PowerConfig,
        ledger: EnergyLedger,
        log: LogFn,
    ):
        self.env = env
        self.name = name
        self.device = device
        self.power = power
        self.ledger = ledger
        self.log = log
        self.store = FirmwareStore(power.node_flash_bytes)
        self.store.add(firmware)
        self.firmware = firmware
        self.state = NodeState.IDLE
        self.flash_pending = False
        self.flashing_until_us: Optional[int] = None
        self.jobs_done = 0
        self._slot = simpy.Resource(env, capacity=1)
        ledger.set_state(name, PowerState.IDLE, power.node_idle_mw, env.now)

    @property
    def accepts_stimuli(self) -> bool:
        return not self.flash_pending

    def _enter(self, state: NodeState, power_mw: float):
        self.state = state
        ledger_state = {
            NodeState.IDLE: PowerState.IDLE,
            NodeState.ACTIVE: PowerState.ACTIVE,
            NodeState.FLASHING: PowerState.FLASHING,
        }[state]
        self.ledger.set_state(self.name, ledger_state, power_mw, self.env.now)

    def run(self, duration_us: int, power_mw: float, steps=()):
        """
        Process: hold the node Active for duration_us.

        ``steps`` is a list of (offset_us, callback) fired while active, in
        order; offsets are relative to the start of the job.
        """
        with self._slot.request() as req:
            yield req
            self._enter(NodeState.ACTIVE, power_mw)
            elapsed = 0
            for offset, callback in steps:
                if offset > elapsed:
                    yield self.env.timeout(offset - elapsed)
                    elapsed = offset
                callback()
            if duration_us > elapsed:
                yield self.env.timeout(duration_us - elapsed)
            self.jobs_done += 1
            self._enter(NodeState.IDLE, self.power.node_idle_mw)

    def reflash(self, firmware: Firmware) -> simpy.Process:
        """Start writing a new image; raises Busy while another flash is pending."""
        if self.flash_pending:
            raise Busy(f"Node {self.name} is already flashing")
        self.store.add(firmware)
        self.flash_pending = True
        return self.env.process(self._flash(firmware))

    def _flash(self, firmware: Firmware):
        with self._slot.request() as req:
            yield req
            duration = flash_duration_us(
                firmware.size_bytes, self.power.flash_bandwidth_bytes_per_s
            )
            self.flashing_until_us = self.env.now + duration
            self._enter(NodeState.FLASHING, self.power.flash_mw)
            self.log(
                self.name,
                "reflash_start",
                {"firmware": firmware.name, "duration_us": duration},
            )
            logger.info(f"Node {self.name}: flashing {firmware.name} ({duration} us)")
            yield self.env.timeout(duration)
            self.firmware = firmware
            self.flash_pending = False
            self.flashing_until_us = None
            self._enter(NodeState.IDLE, self.power.node_idle_mw)
            self.log(self.name, "reflash_done", {"firmware": firmware.name})


class HubState(StrEnum):
    SLEEP = "sleep"
    ACTIVE = "active"


class HubSim:
    """
    Hub sleep/wake state machine with the dialog policy.

    Sleep -> Active only on a wake event; Active -> Sleep only after
    idle_timeout without activity.
    """

    def __init__(
        self,
        env: simpy.Environment,
        config: HubConfig,
        power: PowerConfig,
        ledger: EnergyLedger,
        log: LogFn,
    ):
        self.env = env
        self.config = config
        self.power = power
        self.ledger = ledger
        self.log = log
        self.state = HubState.SLEEP
        self.timeout_us = to_us(config.idle_timeout_s)
        self.last_activity_us = 0
        self.wakes = 0
        self._rules = [(re.compile(r.pattern), r) for r in config.dialog]
        ledger.set_state("hub", PowerState.SLEEP, power.hub_sleep_mw, env.now)

    @property
    def is_active(self) -> bool:
        return self.state == HubState.ACTIVE

    def wake(self, source: str):
        if self.state == HubState.SLEEP:
            self.state = HubState.ACTIVE
            self.wakes += 1
            self.ledger.set_state(
                "hub", PowerState.ACTIVE, self.power.hub_active_mw, self.env.now
            )
            self.log("hub", "wake", {"source": source})
            logger.info(f"Hub awake at {self.env.now} us ({source})")
        self.touch()

    def touch(self):
        """Register activity; the hub sleeps idle_timeout after the last one."""
        if not self.is_active:
            return
        self.last_activity_us = self.env.now
        self.env.process(self._sleep_after(self.env.now + self.timeout_us))

    def _sleep_after(self, deadline_us: int):
        yield self.env.timeout(deadline_us - self.env.now)
        if self.is_active and self.last_activity_us + self.timeout_us <= self.env.now:
            self.state = HubState.SLEEP
            self.ledger.set_state(
                "hub", PowerState.SLEEP, self.power.hub_sleep_mw, self.env.now
            )
            self.log("hub", "sleep", {})
            logger.info(f"Hub asleep at {self.env.now} us")

    def respond(self, text: str):
        """First dialog rule whose pattern occurs in the transcript, or None."""
        lowered = text.lower()
        for pattern, rule in self._rules:
            if pattern.search(lowered):
                return rule
        return None

    def wake_word_in(self, text: str) -> Optional[str]:
        lowered = text.lower()
        for word in self.config.wake_words:
            if word in lowered:
                return word
        return None


def confidence_of(posteriors) -> float:
    """Mean per-frame maximum posterior (1.0 for an empty sequence)."""
    if len(posteriors) == 0:
        return 1.0
    value = float(posteriors.max(axis=1).mean())
    return value if math.isfinite(value) else 0.0


def analytics_summary(fields: Dict[str, object]) -> Dict[str, object]:
    """Public scalar fields of an analytics message, for the event log."""
    return {
        k: (int(v) if isinstance(v, int) else v)
        for k, v in fields.items()
        if isinstance(v, (int, str))
    }


def as_list(values) -> List[float]:
    return [float(v) for v in values]
