# app/config.py
"""Configuration management for DavidSim."""

import os
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import ClassVar, Dict, List, Optional

import yaml

from core.analysis import Budget
from core.dsp import FeatureConfig
from core.errors import ConfigError
from utils.logger import logger

SEED_ENV = "DAVID_SEED"


def _read_version() -> str:
    pyproject_path = Path(__file__).parent.parent / "pyproject.toml"
    with open(pyproject_path, "rb") as f:
        return tomllib.load(f)["project"]["version"]


def _section(cls, data: Optional[dict]):
    """Build a config dataclass from a YAML mapping, ignoring unknown keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be a mapping, got {data!r}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        logger.warning(f"Ignoring unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**{k: v for k, v in data.items() if k in known})
    except TypeError as e:
        raise ConfigError(f"Bad {cls.__name__} section: {e}")


def _coerce_numbers(section) -> None:
    """
    Bring int and float fields of a loaded section to their declared type.

    YAML reads ``1.0e+8`` as a float and ``1e8`` as a string; integer fields
    accept either as long as the value is whole.
    """
    name = type(section).__name__
    for f in fields(section):
        if f.type not in (int, float):
            continue
        value = getattr(section, f.name)
        if isinstance(value, bool):
            raise ConfigError(f"{name}.{f.name} must be a number, got {value!r}")
        if isinstance(value, int) and f.type is int:
            continue
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}.{f.name} must be a number, got {value!r}")
        if f.type is int:
            if not number.is_integer():
                raise ConfigError(f"{name}.{f.name} must be whole, got {value!r}")
            setattr(section, f.name, int(number))
        else:
            setattr(section, f.name, number)


@dataclass
class PowerConfig:
    """Power figures of the platform (calibration defaults)."""

    hub_sleep_mw: float = 0.5
    hub_active_mw: float = 50.0
    node_idle_mw: float = 2.0
    flash_mw: float = 20.0
    flash_bandwidth_bytes_per_s: int = 100_000_000
    battery_wh: float = 7.4
    node_flash_bytes: int = 16 * 1024 * 1024

    def __post_init__(self):
        _coerce_numbers(self)
        if min(self.hub_sleep_mw, self.hub_active_mw, self.node_idle_mw) < 0:
            raise ConfigError("Power figures must be >= 0")
        if self.flash_bandwidth_bytes_per_s <= 0 or self.node_flash_bytes <= 0:
            raise ConfigError("Flash bandwidth and capacity must be positive")


@dataclass
class BudgetConfig:
    tops_per_watt: float = 55.0
    power_budget_mw: float = 50.0
    ops_per_mac: int = 2

    def __post_init__(self):
        _coerce_numbers(self)

    def to_budget(self, idle_floor_mw: float = 0.0) -> Budget:
        return Budget(
            tops_per_watt=self.tops_per_watt,
            power_budget_mw=self.power_budget_mw,
            ops_per_mac=self.ops_per_mac,
            idle_floor_mw=idle_floor_mw,
        )


@dataclass
class DialogRule:
    """Transcript pattern (regex, searched) -> intent -> spoken response."""

    pattern: str
    intent: str
    response: str
    action: Optional[str] = None


def _default_dialog() -> List[DialogRule]:
    return [
        DialogRule(r"\b(turn around|spin)\b", "spin", "watch me spin", "rotate_360"),
        DialogRule(r"\blook\b", "look", "i am looking", "rotate_180"),
        DialogRule(r"\bhow are you\b", "mood", "i am happy", "antennae_happy"),
        DialogRule(r"\bwhat\b", "question", "i do not know", "antennae_confused"),
        DialogRule(r"\b(hello|hi)\b", "greet", "hello friend", "nod"),
        DialogRule(r"\bhey david\b", "attention", "yes i am listening", "eyes_follow"),
    ]


@dataclass
class HubConfig:
    idle_timeout_s: float = 30.0
    wake_words: List[str] = field(default_factory=lambda: ["hey david"])
    vision_wake: bool = False
    dialog: List[DialogRule] = field(default_factory=_default_dialog)

    def __post_init__(self):
        _coerce_numbers(self)
        if self.idle_timeout_s <= 0:
            raise ConfigError("idle_timeout_s must be positive")
        self.dialog = [
            rule if isinstance(rule, DialogRule) else _section(DialogRule, rule)
            for rule in self.dialog
        ]
        self.wake_words = [w.lower() for w in self.wake_words]


@dataclass
class FirmwareConfig:
    """Declared image sizes and runtime settings of the bundled firmware."""

    vision_bytes: int = 4_000_000
    audio_bytes: int = 2_000_000
    tts_bytes: int = 2_000_000
    audio_model: str = "speechnet1"
    vision_event_s: float = 1.0
    tts_chunk_frames: int = 8

    def __post_init__(self):
        _coerce_numbers(self)
        if min(self.vision_bytes, self.audio_bytes, self.tts_bytes) <= 0:
            raise ConfigError("Firmware sizes must be positive")


@dataclass
class PlatformConfig:
    """Platform configuration container."""

    power: PowerConfig = field(default_factory=PowerConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    hub: HubConfig = field(default_factory=HubConfig)
    embodiment: str = "rover"
    action_overrides: Dict[str, Dict[str, float]] = field(default_factory=dict)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    firmware: FirmwareConfig = field(default_factory=FirmwareConfig)
    seed: int = 0
    version: ClassVar[str] = _read_version()

    def node_budget(self) -> Budget:
        return self.budget.to_budget(idle_floor_mw=self.power.node_idle_mw)

    def with_env(self) -> "PlatformConfig":
        """Apply environment overrides (DAVID_SEED)."""
        raw = os.environ.get(SEED_ENV)
        if raw is not None:
            try:
                self.seed = int(raw)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}")
        return self

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PlatformConfig":
        data = data or {}
        return cls(
            power=_section(PowerConfig, data.get("power")),
            budget=_section(BudgetConfig, data.get("budget")),
            hub=_section(HubConfig, data.get("hub")),
            embodiment=data.get("embodiment", "rover"),
            action_overrides=data.get("action_overrides", {}) or {},
            features=FeatureConfig.from_dict(data.get("features", {}) or {}),
            firmware=_section(FirmwareConfig, data.get("firmware")),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def from_yaml(cls, filepath: str) -> "PlatformConfig":
        """Load configuration from YAML file."""
        try:
            with open(filepath) as f:
                data = yaml.safe_load(f)
        except FileNotFoundError:
            logger.warning(f"Config file {filepath} not found, using defaults")
            return cls().with_env()
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {filepath} is not valid YAML: {e}")
        return cls.from_dict(data).with_env()

    def to_dict(self) -> Dict:
        """Convert configuration to dictionary for YAML export."""
        return {
            "power": asdict(self.power),
            "budget": asdict(self.budget),
            "hub": asdict(self.hub),
            "embodiment": self.embodiment,
            "action_overrides": dict(self.action_overrides),
            "features": self.features.to_dict(),
            "firmware": asdict(self.firmware),
            "seed": self.seed,
        }

    def save(self, filepath: str):
        """Save configuration to YAML file."""
        try:
            with open(filepath, "w") as f:
                yaml.safe_dump(self.to_dict(), f, sort_keys=True)
            logger.info(f"Settings saved to {filepath}")
        except OSError as e:
            logger.error(f"Error saving settings: {e}", exc_info=True)
