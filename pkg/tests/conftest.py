"""Shared fixtures: a live gateway on a background event loop.

Integration tests drive the gateway exactly like external clients do —
HTTP via httpx, WebSocket via the sync websockets client, device links
via raw TCP sockets — while the service itself runs on its own thread's
event loop. ``GatewayHarness.submit`` lets a test await a coroutine on
that loop when it needs to poke service internals directly.
"""

from __future__ import annotations

import asyncio
import socket
import threading
import time

import httpx
import pytest

from iohrt.config import AnomalyRuleConfig, GatewayConfig, UserSeed
from iohrt.gateway import Gateway
from iohrt.protocol import Envelope, EnvelopeDecoder, encode_envelope

DEFAULT_USERS = [
    UserSeed("admin-root", "admin-pass-1", "admin"),
    UserSeed("dev-lee", "devel-pass-1", "developer"),
    UserSeed("op-kim", "opera-pass-1", "operator"),
    UserSeed("view-ann", "viewe-pass-1", "viewer"),
]


def make_config(**overrides) -> GatewayConfig:
    cfg = GatewayConfig(
        host="127.0.0.1",
        http_port=0,
        device_port=0,
        frame_port=0,
        users=list(DEFAULT_USERS),
        rules=[
            AnomalyRuleConfig("temperature", 10.0, 35.0, "robot-7dof", (0.5, 0.5, 0.5)),
            AnomalyRuleConfig("humidity", 20.0, 80.0, "robot-7dof", (0.5, 0.5, 0.5)),
        ],
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


class GatewayHarness:
    """Run a Gateway on a dedicated thread; expose sync helpers to tests."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        self.gateway: Gateway | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None
        self._started = threading.Event()
        self._startup_error: BaseException | None = None

    def start(self) -> "GatewayHarness":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        if not self._started.wait(timeout=10):
            raise RuntimeError("gateway failed to start in time")
        if self._startup_error is not None:
            raise self._startup_error
        return self

    def _run(self) -> None:
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        self.gateway = Gateway(self.config)
        try:
            self._loop.run_until_complete(self.gateway.start())
        except BaseException as exc:  # surface bind errors to the test thread
            self._startup_error = exc
            self._started.set()
            return
        self._started.set()
        self._loop.run_forever()
        self._loop.run_until_complete(self.gateway.stop())
        self._loop.close()

    def stop(self) -> None:
        if self._loop is None:
            return
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(timeout=10)

    def submit(self, coro, timeout: float = 10):
        """Run a coroutine on the gateway loop and return its result."""
        return asyncio.run_coroutine_threadsafe(coro, self._loop).result(timeout)

    # Convenience endpoints

    @property
    def http_base(self) -> str:
        return f"http://127.0.0.1:{self.gateway.http_port}"

    @property
    def ws_url(self) -> str:
        return f"ws://127.0.0.1:{self.gateway.http_port}/ws/telemetry"

    @property
    def device_addr(self) -> tuple[str, int]:
        return ("127.0.0.1", self.gateway.device_port)

    @property
    def frame_addr(self) -> tuple[str, int]:
        return ("127.0.0.1", self.gateway.frame_port)

    def client(self) -> httpx.Client:
        return httpx.Client(base_url=self.http_base, timeout=10)

    def login(self, client: httpx.Client, username: str, password: str) -> dict:
        resp = client.post("/api/login", json={"username": username, "password": password})
        assert resp.status_code == 200, resp.text
        return resp.json()

    def auth_headers(self, client: httpx.Client, username: str, password: str) -> dict:
        return {"Authorization": f"Bearer {self.login(client, username, password)['token']}"}


class DeviceClient:
    """Raw TCP device link speaking the length-prefixed envelope protocol."""

    def __init__(self, addr: tuple[str, int], device_id: str):
        self.device_id = device_id
        self.sock = socket.create_connection(addr, timeout=10)
        self.sock.settimeout(10)
        self._decoder = EnvelopeDecoder()
        self._inbox: list[Envelope] = []
        self._seq = 0
        self.uuid_hex: str | None = None

    def send(self, msg_type: str, payload: dict | None = None, *, seq: int | None = None) -> None:
        if seq is None:
            self._seq += 1
            seq = self._seq
        env = Envelope(
            msg_type=msg_type,
            seq=seq,
            timestamp_ms=int(time.time() * 1000),
            device_id=self.device_id,
            payload=payload or {},
        )
        self.sock.sendall(encode_envelope(env))

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self, timeout: float = 10) -> Envelope:
        self.sock.settimeout(timeout)
        while not self._inbox:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("gateway closed the link")
            self._inbox.extend(self._decoder.feed(data))
        return self._inbox.pop(0)

    def recv_until(self, msg_type: str, timeout: float = 10) -> Envelope:
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no {msg_type} within {timeout}s")
            env = self.recv(timeout=remaining)
            if env.msg_type == msg_type:
                return env

    def hello(self, kind: str, **payload) -> Envelope:
        self.send("hello", {"kind": kind, **payload})
        ack = self.recv_until("hello_ack")
        assert ack.msg_type == "hello_ack", ack
        self.uuid_hex = ack.payload["device_uuid"]
        return ack

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def recv_multipart_frames(resp, max_frames: int, timeout: float = 15):
    """Parse frames out of a streaming multipart/x-mixed-replace response.

    Yields (frame_seq, jpeg_bytes) tuples. ``resp`` is an httpx Response
    opened with stream=True.
    """
    buf = b""
    frames = []
    deadline = time.monotonic() + timeout
    iterator = resp.iter_bytes()
    while len(frames) < max_frames:
        if time.monotonic() > deadline:
            break
        try:
            chunk = next(iterator)
        except StopIteration:
            break
        buf += chunk
        while True:
            header_end = buf.find(b"\r\n\r\n")
            if header_end < 0:
                break
            header = buf[:header_end].decode("latin-1")
            fields = {}
            for line in header.split("\r\n"):
                if ":" in line:
                    key, _, value = line.partition(":")
                    fields[key.strip().lower()] = value.strip()
            length = int(fields["content-length"])
            seq = int(fields["x-frame-seq"])
            body_start = header_end + 4
            if len(buf) < body_start + length + 2:
                break
            body = buf[body_start:body_start + length]
            buf = buf[body_start + length + 2:]
            frames.append((seq, body))
            if len(frames) >= max_frames:
                break
    return frames


class FleetRunner:
    """Run simulated devices on a private event loop thread."""

    def __init__(self, fleet):
        self.fleet = fleet
        self.loop = asyncio.new_event_loop()
        self.stop_event = None
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        asyncio.set_event_loop(self.loop)
        self.stop_event = asyncio.Event()
        self.loop.run_until_complete(self.fleet.run(self.stop_event))
        self.loop.close()

    def stop(self):
        deadline = time.monotonic() + 5
        while self.stop_event is None and time.monotonic() < deadline:
            time.sleep(0.01)
        self.loop.call_soon_threadsafe(self.stop_event.set)
        self.thread.join(timeout=10)


def wait_until(fn, timeout=10, interval=0.05):
    """Poll ``fn`` until it returns something truthy; return that value."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        result = fn()
        if result:
            return result
        time.sleep(interval)
    raise TimeoutError("condition not met in time")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one PASS/FAIL line per acceptance criterion."""
    lines = {}
    for status, outcomes in (("passed", True), ("failed", False), ("error", False)):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            # A setup/teardown error trumps a passing call phase.
            if name not in lines or not outcomes:
                lines[name] = outcomes
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(lines):
            verdict = "PASS" if lines[name] else "FAIL"
            terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture(scope="module")
def harness():
    h = GatewayHarness(make_config()).start()
    yield h
    h.stop()


@pytest.fixture()
def client(harness):
    with harness.client() as c:
        yield c


@pytest.fixture()
def run_fleet(harness):
    """Start simulated devices pointed at the module's gateway; they are
    stopped when the test ends. Returns the Fleet for state inspection."""
    from iohrt.edgesim import fleet_from_dict

    runners = []

    def _start(devices: list[dict]):
        fleet = fleet_from_dict({
            "gateway": {
                "host": "127.0.0.1",
                "device_port": harness.gateway.device_port,
                "frame_port": harness.gateway.frame_port,
            },
            "devices": devices,
        })
        runners.append(FleetRunner(fleet))
        return fleet

    yield _start
    for runner in runners:
        runner.stop()
