"""REST + WebSocket + multipart-stream surface of the gateway.

Every handler is thin: extract the bearer token, authorize the action,
parse the body, call into the service, serialize. Domain exceptions map
to stable JSON error codes in one middleware so the permission matrix
and conflict semantics are uniform across endpoints:

    401 unauthenticated / invalid_credentials
    403 forbidden
    404 not_found
    409 busy | not_holder | offline | duplicate | bad_transition
    422 invalid
    429 locked_out
"""

from __future__ import annotations

import asyncio
import json
import logging
from pathlib import Path

from aiohttp import WSCloseCode, web

from ..auth import (
    ForbiddenError,
    InvalidCredentialsError,
    LockedOutError,
    Role,
    UnauthenticatedError,
)
from ..config import ConfigError, control_params_from_dict, rule_from_dict, rule_to_dict
from ..control import CommandRejected
from ..registry import (
    ControlBusyError,
    DeviceOfflineError,
    DuplicateDeviceError,
    NotARobotError,
    NotHolderError,
    UnknownDeviceError,
)
from ..auth import DuplicateUserError
from .fanout import CLOSE
from .missions import BadTransitionError, UnknownMissionError

log = logging.getLogger(__name__)

# Documented (method, path) -> required action; None means public.
ENDPOINT_ACTIONS = {
    ("POST", "/api/login"): None,
    ("POST", "/api/logout"): "logout",
    ("GET", "/api/health"): None,
    ("GET", "/api/devices"): "view_devices",
    ("GET", "/api/devices/{id}"): "view_devices",
    ("PUT", "/api/devices/{id}/config"): "register_config",
    ("GET", "/api/sensors/{id}/readings"): "view_readings",
    ("POST", "/api/robots/{id}/acquire"): "acquire_robot",
    ("POST", "/api/robots/{id}/release"): "release_robot",
    ("POST", "/api/robots/{id}/command"): "send_command",
    ("POST", "/api/robots/{id}/goal"): "set_goal",
    ("POST", "/api/robots/{id}/reset"): "reset_setpoint",
    ("GET", "/api/cameras/{id}/frame"): "view_frames",
    ("GET", "/api/cameras/{id}/stream"): "view_frames",
    ("GET", "/api/missions"): "view_missions",
    ("POST", "/api/missions/{id}/ack"): "ack_mission",
    ("GET", "/api/rules"): "view_rules",
    ("PUT", "/api/rules"): "update_rules",
    ("GET", "/api/sessions/{id}"): "export_session",
    ("POST", "/api/users"): "manage_users",
    ("POST", "/api/users/{username}/role"): "manage_users",
    ("GET", "/ws/telemetry"): "subscribe_telemetry",
}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _error_response(status: int, code: str, message: str) -> web.Response:
    return web.json_response(
        {"error": {"code": code, "message": message}}, status=status
    )


_ERROR_MAP = [
    (UnauthenticatedError, 401, "unauthenticated"),
    (InvalidCredentialsError, 401, "invalid_credentials"),
    (LockedOutError, 429, "locked_out"),
    (ForbiddenError, 403, "forbidden"),
    (UnknownDeviceError, 404, "not_found"),
    (NotARobotError, 404, "not_found"),
    (UnknownMissionError, 404, "not_found"),
    (ControlBusyError, 409, "busy"),
    (NotHolderError, 409, "not_holder"),
    (DeviceOfflineError, 409, "offline"),
    (DuplicateUserError, 409, "duplicate"),
    (DuplicateDeviceError, 409, "duplicate"),
    (BadTransitionError, 409, "bad_transition"),
    (CommandRejected, 422, "invalid"),
    (ConfigError, 422, "invalid"),
    (ValueError, 422, "invalid"),
]

_CORS_HEADERS = {
    "Access-Control-Allow-Origin": "*",
    "Access-Control-Allow-Headers": "Authorization, Content-Type",
    "Access-Control-Allow-Methods": "GET, POST, PUT, DELETE, OPTIONS",
}


@web.middleware
async def error_middleware(request: web.Request, handler):
    try:
        response = await handler(request)
    except ApiError as exc:
        response = _error_response(exc.status, exc.code, str(exc))
    except web.HTTPException:
        raise
    except Exception as exc:
        for exc_type, status, code in _ERROR_MAP:
            if isinstance(exc, exc_type):
                response = _error_response(status, code, str(exc))
                break
        else:
            log.exception("unhandled error on %s %s", request.method, request.path)
            response = _error_response(500, "internal", "internal error")
    if isinstance(response, web.Response):
        response.headers.update(_CORS_HEADERS)
    return response


def bearer_token(request: web.Request) -> str | None:
    header = request.headers.get("Authorization", "")
    if header.startswith("Bearer "):
        return header[len("Bearer "):].strip()
    return request.query.get("token")


async def _body(request: web.Request) -> dict:
    raw = await request.text()
    if not raw:
        return {}
    try:
        obj = json.loads(raw)
    except ValueError:
        raise ApiError(422, "invalid", "request body must be valid JSON") from None
    if not isinstance(obj, dict):
        raise ApiError(422, "invalid", "request body must be a JSON object")
    return obj


def _require(body: dict, key: str, kind=str):
    value = body.get(key)
    if not isinstance(value, kind) or (kind is str and not value):
        raise ApiError(422, "invalid", f"body field {key!r} is required")
    return value


def build_app(svc) -> web.Application:
    app = web.Application(middlewares=[error_middleware])

    # Session / accounts

    async def login(request):
        body = await _body(request)
        token = svc.auth.authenticate(
            _require(body, "username"), _require(body, "password")
        )
        return web.json_response(
            {
                "token": token.value,
                "username": token.username,
                "role": token.role.render(),
                "session_id": token.session_id,
                "expires_ms": token.expires_ms,
            }
        )

    async def logout(request):
        token = svc.auth.authorize(bearer_token(request), "logout")
        released = svc.registry.release_all(token.session_id)
        svc.auth.revoke(token.value)
        return web.json_response({"released": sorted(released)})

    async def create_user(request):
        body = await _body(request)
        record = svc.auth.create_user(
            bearer_token(request),
            _require(body, "username"),
            _require(body, "password"),
            Role.parse(_require(body, "role")),
        )
        return web.json_response(
            {"username": record.username, "role": record.role.render()}, status=201
        )

    async def set_role(request):
        body = await _body(request)
        try:
            record = svc.auth.set_role(
                bearer_token(request),
                request.match_info["username"],
                Role.parse(_require(body, "role")),
            )
        except KeyError as exc:
            raise ApiError(404, "not_found", str(exc)) from None
        return web.json_response(
            {"username": record.username, "role": record.role.render()}
        )

    # Devices

    async def list_devices(request):
        svc.auth.authorize(bearer_token(request), "view_devices")
        devices = [svc.device_detail(rec) for rec in svc.registry.list_devices()]
        devices.sort(key=lambda d: d["id"])
        return web.json_response({"devices": devices})

    async def get_device(request):
        svc.auth.authorize(bearer_token(request), "view_devices")
        rec = svc.registry.lookup(request.match_info["id"])
        return web.json_response(svc.device_detail(rec))

    async def put_device_config(request):
        svc.auth.authorize(bearer_token(request), "register_config")
        body = await _body(request)
        detail = svc.update_robot_config(request.match_info["id"], body)
        return web.json_response(detail)

    async def get_readings(request):
        svc.auth.authorize(bearer_token(request), "view_readings")
        device_id = request.match_info["id"]
        rec = svc.registry.lookup(device_id)
        if rec.kind not in ("sensor", "actuator"):
            raise ApiError(404, "not_found", f"{device_id!r} is not a sensor")
        channel = request.query.get("channel")
        if not channel:
            raise ApiError(422, "invalid", "query parameter 'channel' is required")
        try:
            from_ms = int(request.query.get("from", 0))
            to_ms = int(request.query.get("to", svc.now_ms()))
            limit = int(request.query.get("limit", 100))
        except ValueError:
            raise ApiError(422, "invalid", "from/to/limit must be integers") from None
        readings = svc.store.query_readings(device_id, channel, from_ms, to_ms, limit)
        return web.json_response(
            {
                "device_id": device_id,
                "channel": channel,
                "readings": [
                    {
                        "value": r.value,
                        "unit": r.unit,
                        "timestamp_ms": r.timestamp_ms,
                    }
                    for r in readings
                ],
            }
        )

    # Robot control

    async def acquire(request):
        token = svc.auth.authorize(bearer_token(request), "acquire_robot")
        robot_id = request.match_info["id"]
        svc.require_robot(robot_id)
        rec = svc.registry.acquire_control(token.session_id, robot_id)
        return web.json_response({"device_id": rec.id, "controller": rec.controller})

    async def release(request):
        body = await _body(request)
        force = bool(body.get("force", False))
        action = "force_release" if force else "release_robot"
        token = svc.auth.authorize(bearer_token(request), action)
        robot_id = request.match_info["id"]
        svc.require_robot(robot_id)
        svc.registry.release_control(token.session_id, robot_id, force=force)
        return web.json_response({"device_id": robot_id, "controller": None})

    async def command(request):
        token = svc.auth.authorize(bearer_token(request), "send_command")
        body = await _body(request)
        result = await svc.route_command(token, request.match_info["id"], body)
        return web.json_response(result)

    async def goal(request):
        token = svc.auth.authorize(bearer_token(request), "set_goal")
        body = await _body(request)
        result = await svc.route_goal(token, request.match_info["id"], body)
        return web.json_response(result)

    async def reset(request):
        token = svc.auth.authorize(bearer_token(request), "reset_setpoint")
        body = await _body(request)
        result = await svc.route_reset(token, request.match_info["id"], body)
        return web.json_response(result)

    # Cameras

    def _camera(request) -> str:
        device_id = request.match_info["id"]
        rec = svc.registry.lookup(device_id)
        if rec.kind != "camera":
            raise ApiError(404, "not_found", f"{device_id!r} is not a camera")
        return device_id

    async def get_frame(request):
        svc.auth.authorize(bearer_token(request), "view_frames")
        device_id = _camera(request)
        frame = svc.store.latest_frame(device_id)
        if frame is None:
            raise ApiError(404, "not_found", f"no frames from {device_id!r} yet")
        return web.Response(
            body=frame.image,
            content_type="image/jpeg",
            headers={
                "X-Frame-Seq": str(frame.frame_seq),
                "X-Frame-Timestamp-Ms": str(frame.timestamp_ms),
                "Cache-Control": "no-store",
            },
        )

    async def stream_frames(request):
        svc.auth.authorize(bearer_token(request), "view_frames")
        device_id = _camera(request)
        response = web.StreamResponse(
            status=200,
            headers={
                "Content-Type": "multipart/x-mixed-replace; boundary=frame",
                "Cache-Control": "no-store",
            },
        )
        await response.prepare(request)
        min_interval = 1.0 / svc.config.stream_max_fps
        loop = asyncio.get_running_loop()
        last_seq = -1
        earliest_next = loop.time()
        try:
            while not svc.stopping:
                frame = svc.store.latest_frame(device_id)
                if frame is None or frame.frame_seq <= last_seq:
                    await svc.wait_frame(device_id, timeout=0.25)
                    continue
                delay = earliest_next - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                    continue  # re-fetch: a fresher frame may have landed
                part = (
                    b"--frame\r\n"
                    b"Content-Type: image/jpeg\r\n"
                    b"Content-Length: " + str(len(frame.image)).encode() + b"\r\n"
                    b"X-Frame-Seq: " + str(frame.frame_seq).encode() + b"\r\n"
                    b"\r\n" + frame.image + b"\r\n"
                )
                await response.write(part)
                last_seq = frame.frame_seq
                earliest_next = loop.time() + min_interval
        except (ConnectionError, asyncio.CancelledError):
            pass
        return response

    # Missions and rules

    async def list_missions(request):
        svc.auth.authorize(bearer_token(request), "view_missions")
        return web.json_response(
            {"missions": [m.to_dict() for m in svc.missions.list_missions()]}
        )

    async def ack_mission(request):
        svc.auth.authorize(bearer_token(request), "ack_mission")
        mission = svc.missions.ack(request.match_info["id"], svc.now_ms())
        svc.publish_mission(mission)
        return web.json_response(mission.to_dict())

    async def get_rules(request):
        svc.auth.authorize(bearer_token(request), "view_rules")
        return web.json_response(
            {"rules": [rule_to_dict(r) for r in svc.missions.rules()]}
        )

    async def put_rules(request):
        svc.auth.authorize(bearer_token(request), "update_rules")
        body = await _body(request)
        raw = body.get("rules")
        if not isinstance(raw, list):
            raise ApiError(422, "invalid", "body must carry a 'rules' list")
        rules = [rule_from_dict(r) for r in raw]
        svc.missions.set_rules(rules)
        return web.json_response({"rules": [rule_to_dict(r) for r in rules]})

    # Session logs

    async def get_session(request):
        svc.auth.authorize(bearer_token(request), "export_session")
        session_id = request.match_info["id"]
        entries = svc.store.export_session(session_id)
        if not entries and session_id not in svc.store.session_ids():
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        return web.json_response(
            {
                "session_id": session_id,
                "entries": [svc.session_entry_dict(e) for e in entries],
            }
        )

    # Telemetry WebSocket

    async def ws_telemetry(request):
        svc.auth.authorize(bearer_token(request), "subscribe_telemetry")
        topics_raw = request.query.get("topics")
        topics = None
        if topics_raw:
            topics = [t.strip() for t in topics_raw.split(",") if t.strip()]
        sub = svc.hub.subscribe(topics)  # ValueError on unknown topic -> 422
        ws = web.WebSocketResponse()
        await ws.prepare(request)
        svc.register_ws(ws)

        async def pump():
            while True:
                event = await sub.queue.get()
                if event is CLOSE:
                    await ws.close(
                        code=WSCloseCode.TRY_AGAIN_LATER, message=b"subscriber too slow"
                    )
                    return
                await ws.send_json(event)

        pump_task = asyncio.ensure_future(pump())
        try:
            async for _ in ws:  # inbound messages are ignored; detect close
                pass
        finally:
            svc.unregister_ws(ws)
            svc.hub.unsubscribe(sub)
            pump_task.cancel()
            try:
                await pump_task
            except (asyncio.CancelledError, ConnectionError):
                pass
        return ws

    # Meta

    async def health(request):
        return web.json_response(
            {
                "status": "ok",
                "timestamp_ms": svc.now_ms(),
                "devices": len(svc.registry.list_devices()),
            }
        )

    async def preflight(request):
        return web.Response(status=204, headers=_CORS_HEADERS)

    app.router.add_post("/api/login", login)
    app.router.add_post("/api/logout", logout)
    app.router.add_post("/api/users", create_user)
    app.router.add_post("/api/users/{username}/role", set_role)
    app.router.add_get("/api/devices", list_devices)
    app.router.add_get("/api/devices/{id}", get_device)
    app.router.add_put("/api/devices/{id}/config", put_device_config)
    app.router.add_get("/api/sensors/{id}/readings", get_readings)
    app.router.add_post("/api/robots/{id}/acquire", acquire)
    app.router.add_post("/api/robots/{id}/release", release)
    app.router.add_post("/api/robots/{id}/command", command)
    app.router.add_post("/api/robots/{id}/goal", goal)
    app.router.add_post("/api/robots/{id}/reset", reset)
    app.router.add_get("/api/cameras/{id}/frame", get_frame)
    app.router.add_get("/api/cameras/{id}/stream", stream_frames)
    app.router.add_get("/api/missions", list_missions)
    app.router.add_post("/api/missions/{id}/ack", ack_mission)
    app.router.add_get("/api/rules", get_rules)
    app.router.add_put("/api/rules", put_rules)
    app.router.add_get("/api/sessions/{id}", get_session)
    app.router.add_get("/ws/telemetry", ws_telemetry)
    app.router.add_get("/api/health", health)
    app.router.add_route("OPTIONS", "/{tail:.*}", preflight)

    if svc.config.static_dir:
        static_dir = Path(svc.config.static_dir)
        index = static_dir / "index.html"

        async def serve_index(request):
            if not index.exists():
                raise ApiError(404, "not_found", "console bundle not present")
            return web.FileResponse(index)

        app.router.add_get("/", serve_index)
        app.router.add_static("/ui", static_dir)

    return app
