# tests/test_config.py
import pytest

from app.config import DialogRule, PlatformConfig
from core.errors import ConfigError
from sim.nodes import flash_duration_us


def test_yaml_round_trip(tmp_path):
    config = PlatformConfig.from_dict(
        {"power": {"hub_active_mw": 42.0}, "embodiment": "teddy", "seed": 5}
    )
    path = tmp_path / "david.yaml"
    config.save(path)
    loaded = PlatformConfig.from_yaml(path)
    assert loaded.power.hub_active_mw == 42.0
    assert loaded.embodiment == "teddy"
    assert loaded.to_dict() == config.to_dict()


def test_missing_file_gives_defaults(tmp_path):
    config = PlatformConfig.from_yaml(tmp_path / "none.yaml")
    assert config.power.battery_wh == 7.4
    assert config.node_budget().idle_floor_mw == 2.0


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("DAVID_SEED", "11")
    assert PlatformConfig().with_env().seed == 11
    monkeypatch.setenv("DAVID_SEED", "eleven")
    with pytest.raises(ConfigError):
        PlatformConfig().with_env()


def test_dialog_rules_from_mappings():
    config = PlatformConfig.from_dict(
        {"hub": {"dialog": [{"pattern": "dance", "intent": "d", "response": "ok"}]}}
    )
    assert config.hub.dialog == [DialogRule("dance", "d", "ok")]


@pytest.mark.parametrize(
    "data",
    [
        {"power": {"hub_sleep_mw": -1.0}},
        {"hub": {"idle_timeout_s": 0}},
        {"firmware": {"audio_bytes": 0}},
        {"power": "lots"},
    ],
)
def test_invalid_sections(data):
    with pytest.raises(ConfigError):
        PlatformConfig.from_dict(data)


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("power: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        PlatformConfig.from_yaml(path)


@pytest.mark.parametrize("bandwidth", ["1.0e+8", "1e8", "100000000"])
def test_flash_bandwidth_loads_as_integer(tmp_path, bandwidth):
    path = tmp_path / "david.yaml"
    path.write_text(
        f"power:\n  flash_bandwidth_bytes_per_s: {bandwidth}\n", encoding="utf-8"
    )
    power = PlatformConfig.from_yaml(path).power
    assert power.flash_bandwidth_bytes_per_s == 100_000_000
    assert type(power.flash_bandwidth_bytes_per_s) is int
    duration = flash_duration_us(2_000_000, power.flash_bandwidth_bytes_per_s)
    assert duration == 20_000
    assert type(duration) is int


@pytest.mark.parametrize(
    "data",
    [
        {"power": {"flash_bandwidth_bytes_per_s": 1.5e8 + 0.5}},
        {"power": {"node_flash_bytes": "fast"}},
        {"firmware": {"audio_bytes": True}},
        {"budget": {"ops_per_mac": 2.5}},
    ],
)
def test_non_integer_sizes_are_rejected(data):
    with pytest.raises(ConfigError):
        PlatformConfig.from_dict(data)
