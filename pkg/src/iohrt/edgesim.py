"""Simulated edge devices: robots, sensors, and cameras that connect to a
gateway exactly like hardware would.

Every device speaks the length-prefixed envelope protocol over TCP and
reconnects with exponential backoff (0.5 s doubling to 8 s). Cameras
additionally push chunked JPEG frames over UDP. All stochastic behaviour
is seeded so a fleet run is reproducible end to end: a sensor's reading
sequence and a camera's frame bytes depend only on their configuration,
never on wall-clock jitter.
"""

from __future__ import annotations

import asyncio
import io
import json
import logging
import random
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from PIL import Image, ImageDraw

from .config import ConfigError, control_params_to_dict
from .control import ControlParams, apply_command, clamp_workspace, plan_toward
from .protocol import (
    Envelope,
    EnvelopeDecoder,
    ProtocolError,
    chunk_frame,
    encode_envelope,
    encode_frame_packet,
)

log = logging.getLogger("iohrt.edgesim")

BACKOFF_INITIAL_S = 0.5
BACKOFF_MAX_S = 8.0
ARRIVAL_TOLERANCE = 1e-3  # infinity-norm distance at which a goal counts as reached


@dataclass(frozen=True)
class GatewayTarget:
    host: str = "127.0.0.1"
    device_port: int = 9000
    frame_port: int = 9001


# --------------------------------------------------------------------------
# Robot scenarios

@dataclass(frozen=True)
class Scenario:
    name: str
    dof: int
    params: ControlParams
    home: tuple[float, ...]


def _make_scenarios() -> dict[str, Scenario]:
    generic = ControlParams(
        gamma=1.0,
        m=0.0,
        dt_max=0.1,
        v_max=(1.0, 1.0, 1.0),
        workspace=((-1.0, 1.0),) * 3,
        k_p=2.0,
    )
    # six arm joints in radians plus one gripper axis on [0, 1]
    pick_place = ControlParams(
        gamma=1.0,
        m=0.0,
        dt_max=0.1,
        v_max=(1.5,) * 6 + (1.0,),
        workspace=((-3.1, 3.1),) * 6 + ((0.0, 1.0),),
        k_p=2.0,
    )
    # small, slow, heavily scaled-down workspace for fine manipulation
    microsurgery = ControlParams(
        gamma=0.2,
        m=0.0,
        dt_max=0.1,
        v_max=(0.02, 0.02, 0.02, 0.05),
        workspace=((-0.05, 0.05),) * 3 + ((-0.5, 0.5),),
        k_p=4.0,
    )
    return {
        "generic": Scenario("generic", 3, generic, (0.0, 0.0, 0.0)),
        "pick_place_7dof": Scenario(
            "pick_place_7dof", 7, pick_place, (0.0,) * 6 + (0.5,)
        ),
        "microsurgery_4dof": Scenario("microsurgery_4dof", 4, microsurgery, (0.0,) * 4),
    }


SCENARIOS = _make_scenarios()


# --------------------------------------------------------------------------
# Device configurations

@dataclass(frozen=True)
class RobotSimConfig:
    id: str
    scenario: str = "generic"
    state_rate_hz: float = 20.0

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; "
                f"choose from {sorted(SCENARIOS)}"
            )
        if self.state_rate_hz <= 0:
            raise ConfigError("state_rate_hz must be positive")


@dataclass(frozen=True)
class SensorSimConfig:
    id: str
    channel: str = "temperature"
    unit: str = "C"
    base: float = 22.0
    sigma: float = 0.05
    rate_hz: float = 2.0
    seed: int = 0
    anomaly_at_s: float | None = None
    anomaly_magnitude: float = 0.0
    anomaly_duration_s: float = 5.0

    def validate(self) -> None:
        if not self.channel:
            raise ConfigError("sensor channel must be non-empty")
        if self.rate_hz <= 0:
            raise ConfigError("rate_hz must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")


@dataclass(frozen=True)
class CameraSimConfig:
    id: str
    fps: float = 30.0
    seed: int = 0
    width: int = 320
    height: int = 240
    drop_rate: float = 0.0
    quality: int = 80

    def validate(self) -> None:
        if not 0 < self.fps <= 120:
            raise ConfigError("fps must be in (0, 120]")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError("drop_rate must be in [0, 1)")
        if self.width < 16 or self.height < 16:
            raise ConfigError("frame dimensions must be at least 16x16")


# --------------------------------------------------------------------------
# Deterministic signal sources (pure, independently testable)

def sensor_values(config: SensorSimConfig) -> Iterator[float]:
    """Yield the sensor's reading sequence: a seeded Gaussian random walk
    around the base value, with a fixed offset injected over the configured
    anomaly window. Sample k corresponds to time k / rate_hz."""
    rng = random.Random(config.seed)
    walk = 0.0
    anomaly_start = None
    anomaly_end = None
    if config.anomaly_at_s is not None:
        anomaly_start = round(config.anomaly_at_s * config.rate_hz)
        anomaly_end = anomaly_start + max(
            1, round(config.anomaly_duration_s * config.rate_hz)
        )
    k = 0
    while True:
        walk += rng.gauss(0.0, config.sigma)
        value = config.base + walk
        if anomaly_start is not None and anomaly_start <= k < anomaly_end:
            value += config.anomaly_magnitude
        yield value
        k += 1


def render_frame(config: CameraSimConfig, frame_seq: int) -> bytes:
    """Render one JPEG frame. The image is a pure function of
    (configuration, frame_seq): a colored backdrop, a handful of seeded
    rectangles, and a block in the corner encoding the sequence number."""
    rng = random.Random((config.seed << 32) ^ frame_seq)
    image = Image.new(
        "RGB",
        (config.width, config.height),
        (rng.randrange(40, 200), rng.randrange(40, 200), rng.randrange(40, 200)),
    )
    draw = ImageDraw.Draw(image)
    for _ in range(6):
        x0 = rng.randrange(0, config.width - 8)
        y0 = rng.randrange(0, config.height - 8)
        x1 = x0 + rng.randrange(8, config.width - x0)
        y1 = y0 + rng.randrange(8, config.height - y0)
        color = (rng.randrange(256), rng.randrange(256), rng.randrange(256))
        draw.rectangle((x0, y0, x1, y1), fill=color)
    # sequence number as a strip of binary blocks (robust against JPEG loss)
    for bit in range(16):
        on = (frame_seq >> bit) & 1
        x0 = 4 + bit * 8
        draw.rectangle(
            (x0, 4, x0 + 6, 12), fill=(255, 255, 255) if on else (0, 0, 0)
        )
    draw.text((4, 16), f"seq {frame_seq}", fill=(255, 255, 255))
    out = io.BytesIO()
    image.save(out, format="JPEG", quality=config.quality)
    return out.getvalue()


# --------------------------------------------------------------------------
# TCP link with reconnect

class LinkClosed(Exception):
    """The gateway went away mid-session."""


class GatewayLink:
    """One device's envelope link. ``connect`` dials and completes the
    hello handshake; ``recv``/``send`` then move envelopes until the
    connection drops."""

    def __init__(self, target: GatewayTarget, device_id: str, hello: dict):
        self.target = target
        self.device_id = device_id
        self.hello = hello
        self.uuid_hex: str | None = None
        self.heartbeat_s = 1.0
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._decoder = EnvelopeDecoder()
        self._pending: list[Envelope] = []
        self._seq = 0

    @property
    def connected(self) -> bool:
        return self._writer is not None

    async def connect(self) -> dict:
        reader, writer = await asyncio.open_connection(
            self.target.host, self.target.device_port
        )
        self._reader, self._writer = reader, writer
        self._decoder = EnvelopeDecoder()
        self._pending = []
        self._seq = 0
        await self.send("hello", self.hello)
        ack = await asyncio.wait_for(self.recv(), timeout=10)
        if ack.msg_type == "error":
            await self.close()
            raise LinkClosed(f"registration rejected: {ack.payload.get('reason')}")
        if ack.msg_type != "hello_ack":
            await self.close()
            raise LinkClosed(f"expected hello_ack, got {ack.msg_type}")
        self.uuid_hex = ack.payload["device_uuid"]
        self.heartbeat_s = float(ack.payload.get("heartbeat_s", 1.0))
        return ack.payload

    async def send(self, msg_type: str, payload: dict) -> None:
        if self._writer is None:
            raise LinkClosed("not connected")
        self._seq += 1
        env = Envelope(
            msg_type=msg_type,
            seq=self._seq,
            timestamp_ms=int(time.time() * 1000),
            device_id=self.device_id,
            payload=payload,
        )
        try:
            self._writer.write(encode_envelope(env))
            await self._writer.drain()
        except (ConnectionError, OSError) as exc:
            await self.close()
            raise LinkClosed(str(exc)) from exc

    async def recv(self) -> Envelope:
        while not self._pending:
            if self._reader is None:
                raise LinkClosed("not connected")
            try:
                data = await self._reader.read(65536)
            except (ConnectionError, OSError) as exc:
                await self.close()
                raise LinkClosed(str(exc)) from exc
            if not data:
                await self.close()
                raise LinkClosed("gateway closed the connection")
            try:
                self._pending.extend(self._decoder.feed(data))
            except ProtocolError as exc:
                await self.close()
                raise LinkClosed(f"undecodable bytes from gateway: {exc}") from exc
        return self._pending.pop(0)

    async def close(self) -> None:
        writer, self._writer, self._reader = self._writer, None, None
        if writer is not None:
            try:
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass


async def _cancel_all(tasks: Sequence[asyncio.Task]) -> None:
    for task in tasks:
        task.cancel()
    await asyncio.gather(*tasks, return_exceptions=True)


class SimDevice:
    """Common connect/serve/backoff loop. Subclasses provide the hello
    payload, a message handler, and the periodic work loops."""

    kind = "device"

    def __init__(self, target: GatewayTarget, device_id: str):
        self.target = target
        self.device_id = device_id
        self.link = GatewayLink(target, device_id, self.hello_payload())
        self.sessions = 0  # completed handshakes, visible to tests

    def hello_payload(self) -> dict:
        raise NotImplementedError

    async def on_message(self, env: Envelope) -> None:  # noqa: B027
        pass

    def work_loops(self) -> list:
        """Coroutines run for the lifetime of one connection."""
        return []

    async def run(self, stop: asyncio.Event) -> None:
        backoff = BACKOFF_INITIAL_S
        while not stop.is_set():
            try:
                await self.link.connect()
            except (OSError, LinkClosed, asyncio.TimeoutError) as exc:
                log.debug("%s: connect failed: %s", self.device_id, exc)
                await _wait_or_stop(stop, backoff)
                backoff = min(backoff * 2, BACKOFF_MAX_S)
                continue
            self.sessions += 1
            backoff = BACKOFF_INITIAL_S
            log.info("%s: registered with gateway as %s", self.device_id, self.kind)
            try:
                await self._serve(stop)
            except LinkClosed as exc:
                log.info("%s: link lost (%s); reconnecting", self.device_id, exc)
            finally:
                await self.link.close()
            await _wait_or_stop(stop, backoff)
            backoff = min(backoff * 2, BACKOFF_MAX_S)

    async def _serve(self, stop: asyncio.Event) -> None:
        loops = [self._recv_loop(), self._heartbeat_loop()]
        loops.extend(self.work_loops())
        tasks = [asyncio.ensure_future(coro) for coro in loops]
        stop_task = asyncio.ensure_future(stop.wait())
        try:
            done, _ = await asyncio.wait(
                tasks + [stop_task], return_when=asyncio.FIRST_COMPLETED
            )
            for task in done:
                if task is not stop_task and task.exception() is not None:
                    raise task.exception()
        finally:
            await _cancel_all(tasks + [stop_task])

    async def _recv_loop(self) -> None:
        while True:
            env = await self.link.recv()
            await self.on_message(env)

    async def _heartbeat_loop(self) -> None:
        while True:
            await asyncio.sleep(self.link.heartbeat_s)
            await self.link.send("heartbeat", {})


async def _wait_or_stop(stop: asyncio.Event, seconds: float) -> None:
    try:
        await asyncio.wait_for(stop.wait(), timeout=seconds)
    except asyncio.TimeoutError:
        pass


# --------------------------------------------------------------------------
# Devices

class SimRobot(SimDevice):
    """A robot that applies commanded setpoints as its pose immediately and,
    when given a goal (operator autonomy or an inspection mission), steps
    toward it with rate-clamped proportional motion."""

    kind = "robot"

    def __init__(self, target: GatewayTarget, config: RobotSimConfig):
        config.validate()
        self.config = config
        scenario = SCENARIOS[config.scenario]
        self.params = scenario.params
        self.dof = scenario.dof
        self.pose: tuple[float, ...] = clamp_workspace(
            scenario.home, self.params.workspace
        )
        self.goal: tuple[float, ...] | None = None
        self.last_cmd_seq = 0
        self.status = "idle"
        super().__init__(target, config.id)

    def hello_payload(self) -> dict:
        return {
            "kind": "robot",
            "dof": self.dof,
            "pose": list(self.pose),
            "control": control_params_to_dict(self.params),
        }

    async def on_message(self, env: Envelope) -> None:
        if env.msg_type == "command":
            payload = env.payload
            mode = payload.get("mode")
            if mode == "autonomous":
                self.goal = tuple(float(x) for x in payload["goal"])
                self.status = "executing"
            else:
                self.pose = tuple(float(x) for x in payload["setpoint"])
                self.last_cmd_seq = int(payload.get("cmd_seq", self.last_cmd_seq))
                self.status = "teleop"
                await self._report()
        elif env.msg_type == "mission_assign":
            self.goal = tuple(float(x) for x in env.payload["goal"])
            self.status = "executing"
            log.info(
                "%s: mission %s -> goal %s",
                self.device_id, env.payload.get("mission_id"), self.goal,
            )

    def work_loops(self) -> list:
        return [self._motion_loop()]

    def step(self, dt: float) -> None:
        """Advance the pose one tick toward the active goal."""
        if self.goal is None:
            return
        error = max(abs(g - p) for g, p in zip(self.goal, self.pose))
        if error <= ARRIVAL_TOLERANCE:
            self.pose = self.goal
            self.goal = None
            self.status = "idle"
            return
        v_r = plan_toward(self.goal, self.pose, self.params.k_p, self.params.v_max)
        self.pose = apply_command(
            self.pose, (0.0,) * self.dof, dt, self.params.gamma, 1.0, v_r, self.params
        )

    async def _motion_loop(self) -> None:
        tick = 1.0 / self.config.state_rate_hz
        loop = asyncio.get_running_loop()
        next_at = loop.time()
        while True:
            next_at += tick
            await asyncio.sleep(max(0.0, next_at - loop.time()))
            self.step(tick)
            await self._report()

    async def _report(self) -> None:
        await self.link.send(
            "robot_state",
            {
                "pose": list(self.pose),
                "status": self.status,
                "last_cmd_seq": self.last_cmd_seq,
            },
        )


class SimSensor(SimDevice):
    kind = "sensor"

    def __init__(self, target: GatewayTarget, config: SensorSimConfig):
        config.validate()
        self.config = config
        super().__init__(target, config.id)

    def hello_payload(self) -> dict:
        return {"kind": "sensor", "channels": [self.config.channel]}

    def work_loops(self) -> list:
        return [self._reading_loop()]

    async def _reading_loop(self) -> None:
        values = sensor_values(self.config)
        period = 1.0 / self.config.rate_hz
        loop = asyncio.get_running_loop()
        next_at = loop.time()
        for value in values:
            await self.link.send(
                "reading",
                {
                    "channel": self.config.channel,
                    "value": value,
                    "unit": self.config.unit,
                    "timestamp_ms": int(time.time() * 1000),
                },
            )
            next_at += period
            await asyncio.sleep(max(0.0, next_at - loop.time()))


class SimCamera(SimDevice):
    """Registers over TCP like any device, then pushes JPEG frames over UDP
    on a drift-free schedule: frame k is sent at start + k / fps, so pacing
    error never accumulates."""

    kind = "camera"

    def __init__(self, target: GatewayTarget, config: CameraSimConfig):
        config.validate()
        self.config = config
        self.frames_sent = 0
        self._drop_rng = random.Random(config.seed ^ 0x5EED)
        super().__init__(target, config.id)

    def hello_payload(self) -> dict:
        return {
            "kind": "camera",
            "resolution": [self.config.width, self.config.height],
            "fps": self.config.fps,
        }

    def work_loops(self) -> list:
        return [self._frame_loop()]

    async def _frame_loop(self) -> None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setblocking(False)
        loop = asyncio.get_running_loop()
        addr = (self.target.host, self.target.frame_port)
        uuid = bytes.fromhex(self.link.uuid_hex)
        period = 1.0 / self.config.fps
        start = loop.time()
        k = 0
        try:
            while True:
                await asyncio.sleep(max(0.0, start + k * period - loop.time()))
                self.frames_sent += 1
                frame = render_frame(self.config, self.frames_sent)
                packets = chunk_frame(
                    frame,
                    device_uuid=uuid,
                    frame_seq=self.frames_sent,
                    timestamp_ms=int(time.time() * 1000),
                )
                for pkt in packets:
                    if (
                        self.config.drop_rate > 0.0
                        and self._drop_rng.random() < self.config.drop_rate
                    ):
                        continue
                    try:
                        sock.sendto(encode_frame_packet(pkt), addr)
                    except OSError:
                        pass  # full socket buffer: drop, exactly like a lossy link
                k += 1
        finally:
            sock.close()


# --------------------------------------------------------------------------
# Fleet runner

@dataclass
class Fleet:
    target: GatewayTarget
    devices: list[SimDevice] = field(default_factory=list)

    async def run(self, stop: asyncio.Event) -> None:
        if not self.devices:
            raise ConfigError("fleet has no devices")
        await asyncio.gather(*(dev.run(stop) for dev in self.devices))

    def device(self, device_id: str) -> SimDevice:
        for dev in self.devices:
            if dev.device_id == device_id:
                return dev
        raise KeyError(device_id)


_DEVICE_BUILDERS = {
    "robot": (RobotSimConfig, SimRobot),
    "sensor": (SensorSimConfig, SimSensor),
    "camera": (CameraSimConfig, SimCamera),
}


def fleet_from_dict(data: dict) -> Fleet:
    if not isinstance(data, dict):
        raise ConfigError("fleet config must be an object")
    gw = data.get("gateway", {})
    if not isinstance(gw, dict):
        raise ConfigError("'gateway' must be an object")
    try:
        target = GatewayTarget(
            host=str(gw.get("host", "127.0.0.1")),
            device_port=int(gw.get("device_port", 9000)),
            frame_port=int(gw.get("frame_port", 9001)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad gateway target: {exc}") from exc
    devices_spec = data.get("devices")
    if not isinstance(devices_spec, list) or not devices_spec:
        raise ConfigError("'devices' must be a non-empty list")
    fleet = Fleet(target=target)
    for entry in devices_spec:
        if not isinstance(entry, dict):
            raise ConfigError("each device entry must be an object")
        entry = dict(entry)
        kind = entry.pop("kind", None)
        if kind not in _DEVICE_BUILDERS:
            raise ConfigError(
                f"device kind must be one of {sorted(_DEVICE_BUILDERS)}, got {kind!r}"
            )
        config_cls, device_cls = _DEVICE_BUILDERS[kind]
        known = set(config_cls.__dataclass_fields__)
        unknown = set(entry) - known
        if unknown:
            raise ConfigError(f"unknown keys for {kind}: {sorted(unknown)}")
        if "id" not in entry:
            raise ConfigError(f"{kind} entry is missing 'id'")
        try:
            config = config_cls(**entry)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        fleet.devices.append(device_cls(target, config))
    ids = [dev.device_id for dev in fleet.devices]
    if len(set(ids)) != len(ids):
        raise ConfigError("device ids must be unique within a fleet")
    return fleet


def load_fleet(path: str | Path) -> Fleet:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read fleet config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"fleet config {path} is not valid JSON: {exc}") from exc
    return fleet_from_dict(data)


def demo_fleet(target: GatewayTarget) -> Fleet:
    """A small household: one arm, two ambient sensors, one camera. The
    bedroom sensor goes anomalous after 12 s to trigger an inspection."""
    return fleet_from_dict(
        {
            "gateway": {
                "host": target.host,
                "device_port": target.device_port,
                "frame_port": target.frame_port,
            },
            "devices": [
                {"kind": "robot", "id": "robot-7dof", "scenario": "pick_place_7dof"},
                {
                    "kind": "sensor",
                    "id": "temp-bedroom",
                    "channel": "temperature",
                    "unit": "C",
                    "base": 22.0,
                    "sigma": 0.03,
                    "rate_hz": 2.0,
                    "seed": 11,
                    "anomaly_at_s": 12.0,
                    "anomaly_magnitude": 50.0,
                },
                {
                    "kind": "sensor",
                    "id": "hum-bathroom",
                    "channel": "humidity",
                    "unit": "%",
                    "base": 55.0,
                    "sigma": 0.2,
                    "rate_hz": 1.0,
                    "seed": 12,
                },
                {"kind": "camera", "id": "cam-living", "fps": 30.0, "seed": 5},
            ],
        }
    )
