"""The gateway service: three listeners and every cross-module workflow.

One asyncio event loop runs a TCP device-stream listener, a UDP frame
listener, and the HTTP/WS API. Registry, store, auth, and mission board
are individually thread-safe, but all mutation happens on the loop; a
command's admission (validate -> integrate -> persist -> fan out) holds
no awaits, so commands to one robot apply in acceptance order and
interleavings across robots cannot interact.
"""

from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

from aiohttp import WSCloseCode, web

from ..auth import AuthService, Role, Token
from ..config import (
    ConfigError,
    GatewayConfig,
    control_params_from_dict,
    control_params_to_dict,
)
from ..control import (
    CommandRejected,
    ControlParams,
    Vector,
    apply_command,
    autonomy_mode,
    clamp_workspace,
    plan_toward,
)
from ..protocol import DEVICE_KINDS, Envelope
from ..registry import (
    DeviceOfflineError,
    DeviceRecord,
    DeviceRegistry,
    DuplicateDeviceError,
    NotARobotError,
    NotHolderError,
    RegistryError,
)
from ..store import (
    FrameRecord,
    ReadingRecord,
    RecordLog,
    SessionLogEntry,
    StoreError,
    TelemetryStore,
)
from .devicelink import DeviceSession, LinkRejected
from .fanout import Hub
from .frames import FrameIngestProtocol, FrameReassembler
from .http_api import build_app
from .missions import Mission, MissionBoard

log = logging.getLogger(__name__)


@dataclass
class RobotRuntime:
    """Gateway-side control state for one robot."""

    params: ControlParams
    setpoint: Vector
    reported_pose: Vector | None = None
    goal: Vector | None = None
    cmd_seq: int = 0


def _vector_field(body: dict, key: str, dof: int) -> Vector:
    raw = body.get(key)
    if not isinstance(raw, (list, tuple)):
        raise CommandRejected(f"body field {key!r} must be a number array")
    try:
        values = tuple(float(x) for x in raw)
    except (TypeError, ValueError):
        raise CommandRejected(f"body field {key!r} must contain numbers") from None
    if any(not math.isfinite(x) for x in values):
        raise CommandRejected(f"body field {key!r} must be finite")
    if len(values) != dof:
        raise CommandRejected(
            f"dimension mismatch: {key} has {len(values)} axes, robot has {dof}"
        )
    return values


def _number_field(body: dict, key: str, default=None) -> float:
    raw = body.get(key, default)
    if raw is None:
        raise CommandRejected(f"body field {key!r} is required")
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise CommandRejected(f"body field {key!r} must be a number")
    return float(raw)


class Gateway:
    def __init__(self, config: GatewayConfig):
        config.validate()
        self.config = config
        self.store = TelemetryStore(config.store_dir, config.frame_ring_capacity)
        users_log = None
        if config.store_dir is not None:
            users_log = RecordLog(Path(config.store_dir) / "users.log")
        self.auth = AuthService(users_log=users_log, token_ttl_s=config.token_ttl_s)
        for seed in config.users:
            self.auth.bootstrap_user(seed.username, seed.password, Role.parse(seed.role))
        self.registry = DeviceRegistry()
        self.hub = Hub(config.ws_backlog)
        self.missions = MissionBoard(config.rules, config.mission_done_tolerance)
        self.reassembler = FrameReassembler(config.reassembly_timeout_ms)
        self.stats = {"unknown_uuid": 0, "readings": 0, "frames": 0, "commands": 0}
        self.stopping = False
        self.http_port = config.http_port
        self.device_port = config.device_port
        self.frame_port = config.frame_port
        self._robots: dict[str, RobotRuntime] = {}
        self._links: dict[str, DeviceSession] = {}
        self._frame_waiters: dict[str, list[asyncio.Future]] = {}
        self._websockets: set[web.WebSocketResponse] = set()
        self._link_tasks: set[asyncio.Task] = set()
        self._tasks: list[asyncio.Task] = []
        self._udp_protocol: FrameIngestProtocol | None = None
        self._udp_transport = None
        self._device_server: asyncio.AbstractServer | None = None
        self._runner: web.AppRunner | None = None

    @staticmethod
    def now_ms() -> int:
        return int(time.time() * 1000)

    # Lifecycle

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        host = self.config.host
        self._device_server = await asyncio.start_server(
            self._on_device_connection, host, self.config.device_port
        )
        self.device_port = self._device_server.sockets[0].getsockname()[1]

        self._udp_transport, self._udp_protocol = await loop.create_datagram_endpoint(
            lambda: FrameIngestProtocol(self),
            local_addr=(host, self.config.frame_port),
        )
        self.frame_port = self._udp_transport.get_extra_info("sockname")[1]

        self._runner = web.AppRunner(build_app(self), shutdown_timeout=2.0)
        await self._runner.setup()
        site = web.TCPSite(self._runner, host, self.config.http_port)
        await site.start()
        self.http_port = self._runner.addresses[0][1]

        self._tasks = [
            loop.create_task(self._sweep_loop(), name="stale-sweeper"),
            loop.create_task(self._reassembly_gc_loop(), name="frame-gc"),
        ]
        log.info(
            "gateway up: http=%s device=%s frame=%s",
            self.http_port, self.device_port, self.frame_port,
        )

    async def stop(self) -> None:
        self.stopping = True
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks = []

        for session in list(self._links.values()):
            session.close()
        if self._device_server is not None:
            self._device_server.close()
            await self._device_server.wait_closed()
        for task in list(self._link_tasks):
            task.cancel()
        await asyncio.gather(*self._link_tasks, return_exceptions=True)

        for ws in list(self._websockets):
            try:
                await ws.close(code=WSCloseCode.GOING_AWAY, message=b"shutdown")
            except Exception:
                pass
        if self._udp_transport is not None:
            self._udp_transport.close()
        if self._runner is not None:
            await self._runner.cleanup()
        self.store.flush()
        self.store.close()
        log.info("gateway stopped")

    async def run_until(self, stop_signal: asyncio.Event) -> None:
        await self.start()
        try:
            await stop_signal.wait()
        finally:
            await self.stop()

    def _on_device_connection(self, reader, writer) -> None:
        session = DeviceSession(self, reader, writer)
        task = asyncio.ensure_future(session.run())
        self._link_tasks.add(task)
        task.add_done_callback(self._link_tasks.discard)

    # Background maintenance

    async def _sweep_loop(self) -> None:
        interval = max(0.05, min(self.config.heartbeat_interval_s,
                                 self.config.stale_timeout_s / 2))
        timeout_ms = int(self.config.stale_timeout_s * 1000)
        while not self.stopping:
            await asyncio.sleep(interval)
            for rec in self.registry.sweep_stale(self.now_ms(), timeout_ms):
                session = self._links.pop(rec.id, None)
                if session is not None:
                    session.close()
                log.info("device %s timed out", rec.id)
                self._publish_device(rec.id, "disconnected", rec)

    async def _reassembly_gc_loop(self) -> None:
        interval = max(0.05, self.config.reassembly_timeout_ms / 2000.0)
        while not self.stopping:
            await asyncio.sleep(interval)
            self.reassembler.gc(self.now_ms())

    # Device link callbacks (called from DeviceSession on the loop)

    def register_device(self, session: DeviceSession, hello: Envelope) -> dict:
        device_id = hello.device_id
        if not device_id:
            raise LinkRejected("hello must carry a device_id")
        payload = hello.payload
        kind = payload.get("kind")
        if kind not in DEVICE_KINDS:
            raise LinkRejected(f"hello kind must be one of {sorted(DEVICE_KINDS)}")
        now = self.now_ms()
        try:
            if kind == "robot":
                dof = payload.get("dof")
                if not isinstance(dof, int) or dof < 1:
                    raise LinkRejected("robot hello must declare integer dof >= 1")
                params = control_params_from_dict(payload.get("control", {}), dof)
                rec = self.registry.register(device_id, kind, dof, params, now_ms=now)
                pose = payload.get("pose")
                if pose is None:
                    pose = tuple(0.0 for _ in range(dof))
                else:
                    pose = _vector_field({"pose": pose}, "pose", dof)
                pose = clamp_workspace(pose, params.workspace)
                runtime = self._robots.get(device_id)
                if runtime is None:
                    self._robots[device_id] = RobotRuntime(params=params, setpoint=pose,
                                                           reported_pose=pose)
                else:  # reconnect: resume from the fresh hello, keep cmd_seq monotone
                    runtime.params = params
                    runtime.setpoint = pose
                    runtime.reported_pose = pose
                    runtime.goal = None
            else:
                rec = self.registry.register(device_id, kind, now_ms=now)
        except (DuplicateDeviceError, RegistryError, ConfigError, CommandRejected) as exc:
            raise LinkRejected(str(exc)) from exc
        session.device_id = device_id
        session.device_uuid = rec.uuid
        self._links[device_id] = session
        self._publish_device(device_id, "connected", rec)
        return {
            "device_uuid": rec.uuid.hex(),
            "heartbeat_s": self.config.heartbeat_interval_s,
            "stale_timeout_s": self.config.stale_timeout_s,
        }

    async def after_register(self, session: DeviceSession) -> None:
        rec = self.registry.lookup(session.device_id)
        if rec.kind == "robot":
            await self._dispatch_pending(session.device_id)

    def unlink(self, session: DeviceSession) -> None:
        device_id = session.device_id
        if device_id is None or self._links.get(device_id) is not session:
            return
        del self._links[device_id]
        rec = self.registry.mark_disconnected(device_id)
        if rec is not None:
            self._publish_device(device_id, "disconnected", rec)

    async def dispatch_envelope(self, session: DeviceSession, env: Envelope) -> None:
        device_id = session.device_id
        if env.msg_type == "heartbeat":
            self.registry.touch(device_id, self.now_ms())
        elif env.msg_type == "reading":
            await self._handle_reading(session, env)
        elif env.msg_type == "robot_state":
            await self._handle_robot_state(session, env)
        elif env.msg_type == "latency_probe":
            self.registry.touch(device_id, self.now_ms())
            await session.send("latency_echo", env.payload)
        elif env.msg_type == "error":
            log.warning("device %s error: %s", device_id, env.payload)
        else:
            raise LinkRejected(f"devices may not send {env.msg_type}")

    async def _handle_reading(self, session: DeviceSession, env: Envelope) -> None:
        payload = env.payload
        channel = payload.get("channel")
        value = payload.get("value")
        if not isinstance(channel, str) or not channel:
            raise LinkRejected("reading must carry a channel")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise LinkRejected("reading value must be a number")
        timestamp_ms = payload.get("timestamp_ms", env.timestamp_ms)
        if not isinstance(timestamp_ms, int):
            raise LinkRejected("reading timestamp_ms must be an integer")
        record = ReadingRecord(
            device_id=session.device_id,
            channel=channel,
            value=float(value),
            unit=str(payload.get("unit", "")),
            timestamp_ms=timestamp_ms,
        )
        try:
            self.store.append_reading(record)
        except StoreError as exc:
            raise LinkRejected(f"storage failure: {exc}") from exc
        self.stats["readings"] += 1
        self.registry.touch(session.device_id, self.now_ms())
        self.hub.publish(
            "reading",
            session.device_id,
            {
                "channel": record.channel,
                "value": record.value,
                "unit": record.unit,
                "timestamp_ms": record.timestamp_ms,
            },
            self.now_ms(),
        )
        alert, mission = self.missions.evaluate(record, self.now_ms())
        if alert is not None:
            self.hub.publish("alert", record.device_id, alert, self.now_ms())
        if mission is not None:
            self.publish_mission(mission)
            await self._dispatch_pending(mission.target_robot)

    async def _handle_robot_state(self, session: DeviceSession, env: Envelope) -> None:
        rec = self.registry.lookup(session.device_id)
        if rec.kind != "robot":
            raise LinkRejected("only robots send robot_state")
        runtime = self._robots[session.device_id]
        pose = _vector_field(env.payload, "pose", rec.dof)  # CommandRejected on bad
        runtime.reported_pose = pose
        self.registry.touch(session.device_id, self.now_ms())
        self.hub.publish("robot_state", session.device_id, dict(env.payload), self.now_ms())
        for mission in self.missions.observe_pose(session.device_id, pose, self.now_ms()):
            if runtime.goal is not None and tuple(mission.goal) == runtime.goal:
                runtime.goal = None
            self.publish_mission(mission)

    async def _dispatch_pending(self, robot_id: str) -> None:
        """Send mission_assign for every pending mission the robot can take."""
        session = self._links.get(robot_id)
        if session is None or session.closed:
            return
        for mission in self.missions.pending_for(robot_id):
            try:
                await session.send(
                    "mission_assign",
                    {
                        "mission_id": mission.id,
                        "kind": mission.kind,
                        "goal": list(mission.goal),
                        "cause": mission.cause,
                    },
                )
            except ConnectionError:
                return
            self.missions.mark_dispatched(mission.id, self.now_ms())
            runtime = self._robots.get(robot_id)
            if runtime is not None:
                goal = clamp_workspace(mission.goal, runtime.params.workspace)
                runtime.goal = goal
            self.publish_mission(mission)

    # Frame path (called from the UDP protocol on the loop)

    def ingest_frame_packet(self, pkt) -> None:
        rec = self.registry.lookup_by_uuid(pkt.device_uuid)
        if rec is None:
            self.stats["unknown_uuid"] += 1
            return
        now = self.now_ms()
        self.registry.touch(rec.id, now)
        image = self.reassembler.add(pkt, now)
        if image is None:
            return
        frame = FrameRecord(
            device_id=rec.id,
            frame_seq=pkt.frame_seq,
            timestamp_ms=pkt.timestamp_ms,
            image=image,
        )
        if self.store.put_frame(frame):
            self.stats["frames"] += 1
            for fut in self._frame_waiters.pop(rec.id, []):
                if not fut.done():
                    fut.set_result(None)

    async def wait_frame(self, device_id: str, timeout: float) -> None:
        """Block until a new frame lands for the device (or the timeout)."""
        fut = asyncio.get_running_loop().create_future()
        self._frame_waiters.setdefault(device_id, []).append(fut)
        try:
            await asyncio.wait_for(fut, timeout)
        except asyncio.TimeoutError:
            waiters = self._frame_waiters.get(device_id)
            if waiters and fut in waiters:
                waiters.remove(fut)

    # Operator command path (called from HTTP handlers on the loop)

    def require_robot(self, robot_id: str) -> DeviceRecord:
        rec = self.registry.lookup(robot_id)
        if rec.kind != "robot":
            raise NotARobotError(f"{robot_id!r} is not a robot")
        return rec

    def _held_robot(self, token: Token, robot_id: str) -> tuple[DeviceRecord, RobotRuntime]:
        rec = self.require_robot(robot_id)
        if not rec.connected:
            raise DeviceOfflineError(f"{robot_id!r} is disconnected")
        if rec.controller != token.session_id:
            raise NotHolderError(f"acquire control of {robot_id!r} first")
        return rec, self._robots[robot_id]

    async def route_command(self, token: Token, robot_id: str, body: dict) -> dict:
        """Admit one incremental operator command; see module docstring
        for why the section before the device send must stay await-free."""
        rec, runtime = self._held_robot(token, robot_id)
        params = runtime.params
        v_h = _vector_field(body, "v_h", rec.dof)
        dt = _number_field(body, "dt")
        gamma = _number_field(body, "gamma", params.gamma)
        m = _number_field(body, "m", params.m)
        if m >= 1.0:
            raise CommandRejected(
                "m = 1 is fully autonomous; use the goal endpoint instead"
            )
        if "v_r" in body:
            v_r = _vector_field(body, "v_r", rec.dof)
        elif runtime.goal is not None and m > 0.0:
            v_r = plan_toward(runtime.goal, runtime.setpoint, params.k_p, params.v_max)
        else:
            v_r = tuple(0.0 for _ in range(rec.dof))
        prev = runtime.setpoint
        setpoint = apply_command(prev, v_h, dt, gamma, m, v_r, params)
        runtime.setpoint = setpoint
        runtime.cmd_seq += 1
        cmd_seq = runtime.cmd_seq
        now = self.now_ms()
        entry = SessionLogEntry(
            session_id=token.session_id,
            user=token.username,
            device_id=robot_id,
            v_h=v_h,
            dt=dt,
            gamma=gamma,
            m=m,
            v_r=v_r,
            prev_pose=prev,
            pose=setpoint,
            timestamp_ms=now,
        )
        try:
            self.store.log_command(entry)
        except StoreError:
            runtime.setpoint = prev  # do not acknowledge what we cannot log
            runtime.cmd_seq -= 1
            raise
        self.stats["commands"] += 1
        mode = autonomy_mode(m)
        command_payload = {
            "cmd_seq": cmd_seq,
            "mode": mode,
            "setpoint": list(setpoint),
            "m": m,
            "gamma": gamma,
        }
        self.hub.publish("command", robot_id, dict(command_payload), now)
        session = self._links.get(robot_id)
        if session is not None and not session.closed:
            await session.send("command", command_payload)
        return {
            "device_id": robot_id,
            "cmd_seq": cmd_seq,
            "mode": mode,
            "setpoint": list(setpoint),
            "m": m,
            "gamma": gamma,
        }

    async def route_goal(self, token: Token, robot_id: str, body: dict) -> dict:
        rec, runtime = self._held_robot(token, robot_id)
        goal = _vector_field(body, "goal", rec.dof)
        goal = clamp_workspace(goal, runtime.params.workspace)
        runtime.goal = goal
        now = self.now_ms()
        payload = {"mode": "autonomous", "goal": list(goal)}
        self.hub.publish("command", robot_id, dict(payload), now)
        session = self._links.get(robot_id)
        if session is not None and not session.closed:
            await session.send("command", payload)
        return {"device_id": robot_id, "mode": "autonomous", "goal": list(goal)}

    async def route_reset(self, token: Token, robot_id: str, body: dict) -> dict:
        """Jump the commanded setpoint (not logged as an operator motion)."""
        rec, runtime = self._held_robot(token, robot_id)
        pose = _vector_field(body, "pose", rec.dof)
        pose = clamp_workspace(pose, runtime.params.workspace)
        runtime.setpoint = pose
        runtime.goal = None
        runtime.cmd_seq += 1
        payload = {
            "cmd_seq": runtime.cmd_seq,
            "mode": "teleop",
            "setpoint": list(pose),
            "m": 0.0,
            "gamma": runtime.params.gamma,
            "reset": True,
        }
        self.hub.publish("command", robot_id, dict(payload), self.now_ms())
        session = self._links.get(robot_id)
        if session is not None and not session.closed:
            await session.send("command", payload)
        return {"device_id": robot_id, "setpoint": list(pose), "cmd_seq": runtime.cmd_seq}

    def update_robot_config(self, robot_id: str, body: dict) -> dict:
        rec = self.require_robot(robot_id)
        params = control_params_from_dict(body, rec.dof)
        rec = self.registry.update_config(robot_id, params)
        runtime = self._robots.get(robot_id)
        if runtime is not None:
            runtime.params = params
            runtime.setpoint = clamp_workspace(runtime.setpoint, params.workspace)
        self._publish_device(robot_id, rec.state, rec)
        return self.device_detail(rec)

    # Serialization

    def device_detail(self, rec: DeviceRecord) -> dict:
        detail = {
            "id": rec.id,
            "kind": rec.kind,
            "dof": rec.dof,
            "state": rec.state,
            "last_seen_ms": rec.last_seen_ms,
            "controller": rec.controller,
            "uuid": rec.uuid.hex(),
        }
        if rec.kind == "robot":
            runtime = self._robots.get(rec.id)
            if runtime is not None:
                detail["control"] = control_params_to_dict(runtime.params)
                detail["setpoint"] = list(runtime.setpoint)
                detail["reported_pose"] = (
                    list(runtime.reported_pose)
                    if runtime.reported_pose is not None else None
                )
                detail["goal"] = list(runtime.goal) if runtime.goal is not None else None
                detail["cmd_seq"] = runtime.cmd_seq
        elif rec.kind in ("sensor", "actuator"):
            detail["channels"] = self.store.channels(rec.id)
        elif rec.kind == "camera":
            detail["frame"] = self.store.frame_stats(rec.id)
        return detail

    @staticmethod
    def session_entry_dict(entry: SessionLogEntry) -> dict:
        return {
            "session_id": entry.session_id,
            "user": entry.user,
            "device_id": entry.device_id,
            "v_h": list(entry.v_h),
            "dt": entry.dt,
            "gamma": entry.gamma,
            "m": entry.m,
            "v_r": list(entry.v_r),
            "prev_pose": list(entry.prev_pose),
            "pose": list(entry.pose),
            "timestamp_ms": entry.timestamp_ms,
        }

    # Event helpers

    def publish_mission(self, mission: Mission) -> None:
        self.hub.publish("mission", mission.target_robot, mission.to_dict(), self.now_ms())

    def _publish_device(self, device_id: str, state: str, rec: DeviceRecord) -> None:
        self.hub.publish(
            "device",
            device_id,
            {"state": state, "kind": rec.kind, "dof": rec.dof},
            self.now_ms(),
        )

    # WebSocket bookkeeping (called from http_api)

    def register_ws(self, ws: web.WebSocketResponse) -> None:
        self._websockets.add(ws)

    def unregister_ws(self, ws: web.WebSocketResponse) -> None:
        self._websockets.discard(ws)
