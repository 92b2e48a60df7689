import json

import pytest

from iohrt.config import (
    ConfigError,
    GatewayConfig,
    default_rules,
    gateway_config_from_dict,
    load_gateway_config,
    control_params_from_dict,
    control_params_to_dict,
)


def test_defaults_are_valid():
    cfg = GatewayConfig()
    cfg.validate()
    assert cfg.http_port == 8080
    assert cfg.device_port == 9000
    assert cfg.frame_port == 9001
    assert cfg.stale_timeout_s == 5.0
    assert cfg.frame_ring_capacity == 32
    assert cfg.ws_backlog == 256
    assert cfg.stream_max_fps == 30.0


def test_default_rules_cover_temperature_and_humidity():
    rules = default_rules("robot-7dof", (0.0, 0.0))
    by_channel = {r.channel: r for r in rules}
    assert by_channel["temperature"].min == 10.0
    assert by_channel["temperature"].max == 35.0
    assert by_channel["humidity"].min == 20.0
    assert by_channel["humidity"].max == 80.0
    assert all(r.device_id == "*" for r in rules)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        gateway_config_from_dict({"htttp_port": 1})


def test_from_dict_parses_rules_and_users():
    cfg = gateway_config_from_dict({
        "http_port": 1234,
        "rules": [{
            "channel": "co2", "min": 0, "max": 1000,
            "target_robot": "robot-1", "goal": [1, 2, 3],
        }],
        "users": [{"username": "ops", "password": "ops-pass-1", "role": "operator"}],
    })
    assert cfg.http_port == 1234
    assert cfg.rules[0].goal == (1.0, 2.0, 3.0)
    assert cfg.users[0].role == "operator"


def test_bad_rule_bounds_rejected():
    with pytest.raises(ConfigError):
        gateway_config_from_dict({
            "rules": [{
                "channel": "co2", "min": 10, "max": 10,
                "target_robot": "r", "goal": [0],
            }],
        })


def test_load_from_file_and_env_overrides(tmp_path, monkeypatch):
    path = tmp_path / "gw.json"
    path.write_text(json.dumps({"http_port": 8888, "host": "0.0.0.0"}))
    monkeypatch.setenv("IOHRT_CONFIG", str(path))
    monkeypatch.setenv("IOHRT_HTTP_PORT", "9999")
    monkeypatch.setenv("IOHRT_FRAME_PORT", "7001")
    cfg = load_gateway_config()
    assert cfg.host == "0.0.0.0"
    assert cfg.http_port == 9999  # env beats file
    assert cfg.frame_port == 7001
    assert cfg.device_port == 9000  # untouched default


def test_load_explicit_path_beats_env(tmp_path, monkeypatch):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"http_port": 1111}))
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"http_port": 2222}))
    monkeypatch.setenv("IOHRT_CONFIG", str(other))
    assert load_gateway_config(good).http_port == 1111


def test_load_missing_file_raises(monkeypatch):
    monkeypatch.delenv("IOHRT_CONFIG", raising=False)
    with pytest.raises(ConfigError):
        load_gateway_config("/nonexistent/config.json")


def test_bad_env_port(monkeypatch):
    monkeypatch.delenv("IOHRT_CONFIG", raising=False)
    monkeypatch.setenv("IOHRT_HTTP_PORT", "not-a-port")
    with pytest.raises(ConfigError):
        load_gateway_config()


def test_control_params_roundtrip():
    params = control_params_from_dict(
        {"gamma": 2.0, "v_max": [0.5, 0.5], "workspace": [[-1, 1], [-2, 2]]},
        dof=2,
    )
    params.validate(2)
    assert params.gamma == 2.0
    assert params.workspace == ((-1.0, 1.0), (-2.0, 2.0))
    again = control_params_from_dict(control_params_to_dict(params), dof=2)
    assert again == params


def test_control_params_defaults_fill_per_axis():
    params = control_params_from_dict({}, dof=3)
    params.validate(3)
    assert params.v_max == (1.0, 1.0, 1.0)
    assert len(params.workspace) == 3
