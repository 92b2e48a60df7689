"""Dataclass configs for the gateway service and simulator fleets.

Everything is loadable from one JSON file; CLI flags override file values
and ``IOHRT_*`` environment variables override defaults. Port 0 binds an
ephemeral port (tests); the bound port is reported after startup.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .control import ControlParams

ENV_CONFIG = "IOHRT_CONFIG"
ENV_HTTP_PORT = "IOHRT_HTTP_PORT"
ENV_DEVICE_PORT = "IOHRT_DEVICE_PORT"
ENV_FRAME_PORT = "IOHRT_FRAME_PORT"


class ConfigError(Exception):
    pass


@dataclass
class AnomalyRuleConfig:
    channel: str
    min: float
    max: float
    target_robot: str
    goal: tuple[float, ...]
    device_id: str = "*"  # wildcard matches any device

    def validate(self) -> None:
        if not self.channel:
            raise ConfigError("rule channel must be non-empty")
        if not self.min < self.max:
            raise ConfigError(f"rule bounds need min < max, got [{self.min}, {self.max}]")
        if not self.goal:
            raise ConfigError("rule goal must be non-empty")


@dataclass
class UserSeed:
    username: str
    password: str
    role: str = "viewer"


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    http_port: int = 8080
    device_port: int = 9000
    frame_port: int = 9001
    store_dir: str | None = None
    hello_timeout_s: float = 5.0
    heartbeat_interval_s: float = 1.0
    stale_timeout_s: float = 5.0
    frame_ring_capacity: int = 32
    reassembly_timeout_ms: int = 500
    ws_backlog: int = 256
    stream_max_fps: float = 30.0
    token_ttl_s: float = 24 * 3600.0
    mission_done_tolerance: float = 1e-3
    rules: list[AnomalyRuleConfig] = field(default_factory=list)
    users: list[UserSeed] = field(default_factory=list)
    static_dir: str | None = None  # operator console bundle, served at /

    def validate(self) -> None:
        for port in (self.http_port, self.device_port, self.frame_port):
            if not 0 <= port <= 65535:
                raise ConfigError(f"port {port} out of range")
        if self.hello_timeout_s <= 0 or self.stale_timeout_s <= 0:
            raise ConfigError("timeouts must be > 0")
        if self.frame_ring_capacity < 1:
            raise ConfigError("frame_ring_capacity must be >= 1")
        if self.stream_max_fps <= 0:
            raise ConfigError("stream_max_fps must be > 0")
        for rule in self.rules:
            rule.validate()
        for seed in self.users:
            if not seed.username or not seed.password:
                raise ConfigError("seed users need username and password")


def default_rules(target_robot: str, goal: tuple[float, ...]) -> list[AnomalyRuleConfig]:
    """Stock home-environment rules: temperature 10-35 C, humidity 20-80 %."""
    return [
        AnomalyRuleConfig("temperature", 10.0, 35.0, target_robot, goal),
        AnomalyRuleConfig("humidity", 20.0, 80.0, target_robot, goal),
    ]


def rule_from_dict(obj: dict) -> AnomalyRuleConfig:
    try:
        rule = AnomalyRuleConfig(
            channel=obj["channel"],
            min=float(obj["min"]),
            max=float(obj["max"]),
            target_robot=obj["target_robot"],
            goal=tuple(float(x) for x in obj["goal"]),
            device_id=obj.get("device_id", "*"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad anomaly rule {obj!r}: {exc}") from exc
    rule.validate()
    return rule


def rule_to_dict(rule: AnomalyRuleConfig) -> dict:
    return {
        "channel": rule.channel,
        "min": rule.min,
        "max": rule.max,
        "target_robot": rule.target_robot,
        "goal": list(rule.goal),
        "device_id": rule.device_id,
    }


def gateway_config_from_dict(obj: dict) -> GatewayConfig:
    cfg = GatewayConfig()
    plain = {
        "host", "http_port", "device_port", "frame_port", "store_dir",
        "hello_timeout_s", "heartbeat_interval_s", "stale_timeout_s",
        "frame_ring_capacity", "reassembly_timeout_ms", "ws_backlog",
        "stream_max_fps", "token_ttl_s", "mission_done_tolerance", "static_dir",
    }
    for key, value in obj.items():
        if key in plain:
            setattr(cfg, key, value)
        elif key == "rules":
            cfg.rules = [rule_from_dict(r) for r in value]
        elif key == "users":
            cfg.users = [UserSeed(**u) for u in value]
        else:
            raise ConfigError(f"unknown gateway config key {key!r}")
    cfg.validate()
    return cfg


def load_gateway_config(path: str | Path | None = None) -> GatewayConfig:
    """Config file (arg or $IOHRT_CONFIG), then env port overrides."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = gateway_config_from_dict(obj.get("gateway", obj))
    else:
        cfg = GatewayConfig()
    for env, attr in (
        (ENV_HTTP_PORT, "http_port"),
        (ENV_DEVICE_PORT, "device_port"),
        (ENV_FRAME_PORT, "frame_port"),
    ):
        raw = os.environ.get(env)
        if raw is not None:
            try:
                setattr(cfg, attr, int(raw))
            except ValueError:
                raise ConfigError(f"{env} must be an integer, got {raw!r}") from None
    cfg.validate()
    return cfg


def control_params_from_dict(obj: dict, dof: int) -> ControlParams:
    """Parse a robot's declared control block, filling per-axis defaults."""
    try:
        v_max = obj.get("v_max")
        workspace = obj.get("workspace")
        params = ControlParams(
            gamma=float(obj.get("gamma", 1.0)),
            m=float(obj.get("m", 0.0)),
            dt_max=float(obj.get("dt_max", 0.1)),
            v_max=tuple(float(x) for x in v_max) if v_max is not None
            else tuple(1.0 for _ in range(dof)),
            workspace=tuple((float(lo), float(hi)) for lo, hi in workspace)
            if workspace is not None
            else tuple((-1000.0, 1000.0) for _ in range(dof)),
            k_p=float(obj.get("k_p", 1.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad control params: {exc}") from exc
    return params


def control_params_to_dict(params: ControlParams) -> dict:
    return {
        "gamma": params.gamma,
        "m": params.m,
        "dt_max": params.dt_max,
        "v_max": list(params.v_max),
        "workspace": [list(b) for b in params.workspace],
        "k_p": params.k_p,
    }
