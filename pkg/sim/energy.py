# sim/energy.py
"""Exact energy accounting over power-state intervals."""

from collections import defaultdict
from dataclasses import dataclass
from enum import StrEnum
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd

from core.errors import ConfigError, ZeroCapacity, ZeroPower

US_PER_S = 1_000_000
NJ_PER_MJ = 1_000_000  # mW * us = nJ


class PowerState(StrEnum):
    SLEEP = "sleep"
    ACTIVE = "active"
    IDLE = "idle"
    FLASHING = "flashing"
    ACTUATING = "actuating"


def to_us(seconds: Union[int, float, Fraction]) -> int:
    """Seconds to integer microseconds, rounding half away from zero."""
    us = Fraction(seconds) * US_PER_S
    return int(us + Fraction(1, 2)) if us >= 0 else -int(-us + Fraction(1, 2))


@dataclass(frozen=True)
class EnergyInterval:
    device: str
    state: PowerState
    start_us: int
    end_us: int
    power_mw: Fraction

    @property
    def energy_nj(self) -> Fraction:
        return self.power_mw * (self.end_us - self.start_us)


class EnergyLedger:
    """
    Per-device power-state timeline.

    A device holds one open state at a time; changing state closes the
    previous interval. Free-standing intervals (actuator moves) can be
    recorded directly. All sums are exact rationals in nJ.
    """

    def __init__(self, battery_wh: float = 7.4):
        self.battery_wh = battery_wh
        self.intervals: List[EnergyInterval] = []
        self._open: Dict[str, Tuple[PowerState, Fraction, int]] = {}

    def set_state(self, device: str, state: PowerState, power_mw: float, t_us: int):
        if power_mw < 0:
            raise ConfigError(f"{device}: power must be >= 0, got {power_mw}")
        current = self._open.get(device)
        if current is not None:
            old_state, old_power, start = current
            if t_us < start:
                raise ConfigError(f"{device}: state change at {t_us} before {start}")
            if t_us > start:
                self.intervals.append(
                    EnergyInterval(device, old_state, start, t_us, old_power)
                )
        self._open[device] = (PowerState(state), Fraction(power_mw), t_us)

    def state_of(self, device: str) -> Optional[PowerState]:
        current = self._open.get(device)
        return None if current is None else current[0]

    def record(
        self,
        device: str,
        state: PowerState,
        power_mw: float,
        start_us: int,
        end_us: int,
    ):
        if end_us < start_us:
            raise ConfigError(f"{device}: interval ends before it starts")
        if end_us > start_us:
            self.intervals.append(
                EnergyInterval(device, state, start_us, end_us, Fraction(power_mw))
            )

    def close(self, t_us: int):
        """Close every open state at t_us (end of simulation)."""
        for device in list(self._open):
            self.set_state(device, self._open[device][0], 0.0, t_us)
        self._open.clear()

    # ===== Queries =====

    def devices(self) -> List[str]:
        return sorted({iv.device for iv in self.intervals} | set(self._open))

    def energy_nj(self, device: Optional[str] = None) -> Fraction:
        return sum(
            (iv.energy_nj for iv in self.intervals if device in (None, iv.device)),
            Fraction(0),
        )

    def energy_mj(self, device: Optional[str] = None) -> float:
        return float(self.energy_nj(device) / NJ_PER_MJ)

    def energy_by_device_mj(self) -> Dict[str, float]:
        return {d: self.energy_mj(d) for d in self.devices()}

    def time_in_state_us(self, device: str, state: PowerState) -> int:
        return sum(
            iv.end_us - iv.start_us
            for iv in self.intervals
            if iv.device == device and iv.state == state
        )

    def span_us(self) -> int:
        if not self.intervals:
            return 0
        return max(iv.end_us for iv in self.intervals) - min(
            iv.start_us for iv in self.intervals
        )

    def average_power_mw(self, duration_us: Optional[int] = None) -> float:
        duration = duration_us if duration_us is not None else self.span_us()
        if duration <= 0:
            raise ZeroPower("No simulated time to average over")
        return float(self.energy_nj() / duration)

    def to_frame(self) -> pd.DataFrame:
        """One row per interval: device, state, start_s, end_s, power_mw, energy_mj."""
        rows = [
            {
                "device": iv.device,
                "state": str(iv.state),
                "start_s": iv.start_us / US_PER_S,
                "end_s": iv.end_us / US_PER_S,
                "power_mw": float(iv.power_mw),
                "energy_mj": float(iv.energy_nj / NJ_PER_MJ),
            }
            for iv in self.intervals
        ]
        columns = ["device", "state", "start_s", "end_s", "power_mw", "energy_mj"]
        return pd.DataFrame(rows, columns=columns)

    def summary_frame(self) -> pd.DataFrame:
        """Energy and time per (device, state)."""
        totals: Dict[Tuple[str, str], List] = defaultdict(lambda: [0, Fraction(0)])
        for iv in self.intervals:
            entry = totals[(iv.device, str(iv.state))]
            entry[0] += iv.end_us - iv.start_us
            entry[1] += iv.energy_nj
        rows = [
            {
                "device": device,
                "state": state,
                "time_s": t / US_PER_S,
                "energy_mj": float(e / NJ_PER_MJ),
            }
            for (device, state), (t, e) in sorted(totals.items())
        ]
        return pd.DataFrame(rows, columns=["device", "state", "time_s", "energy_mj"])


def battery_life(
    power: Union[float, EnergyLedger],
    battery_wh: Optional[float] = None,
    duration_us: Optional[int] = None,
) -> float:
    """
    Hours of operation: battery_wh * 1000 / average power in mW.

    Args:
        power: Average power in mW, or a ledger to average
        battery_wh: Capacity; defaults to the ledger's battery
        duration_us: Averaging window for a ledger (defaults to its span)

    Returns:
        Predicted battery life in hours
    """
    if isinstance(power, EnergyLedger):
        if battery_wh is None:
            battery_wh = power.battery_wh
        avg_mw = power.average_power_mw(duration_us)
    else:
        avg_mw = float(power)
    if battery_wh is None or battery_wh <= 0:
        raise ZeroCapacity(f"Battery capacity must be positive, got {battery_wh}")
    if avg_mw <= 0:
        raise ZeroPower(f"Average power must be positive, got {avg_mw} mW")
    return battery_wh * 1000.0 / avg_mw
