"""Latency measurement against a live gateway.

Three probe paths, all timed with the monotonic clock:

- ``stream``:   envelope round-trip over the TCP device link
                (latency_probe -> latency_echo)
- ``datagram``: UDP round-trip using the frame header's echo flag
- ``e2e``:      operator-visible loop — POST a zero-displacement command,
                wait for the matching robot_state event on the WebSocket

Probes that get no answer within the timeout are counted as lost, never
invented. Reports render to CSV (one row per successful probe plus a
summary footer) and parse back to an identical report.
"""

from __future__ import annotations

import json
import math
import socket
import time
import uuid as uuid_mod
from dataclasses import dataclass, field

import httpx
from websockets.sync.client import connect as ws_connect

from .protocol import (
    Envelope,
    EnvelopeDecoder,
    FLAG_ECHO,
    FramePacket,
    decode_frame_packet,
    encode_envelope,
    encode_frame_packet,
)

PATHS = ("stream", "datagram", "e2e")
DEFAULT_TIMEOUT_S = 5.0

CSV_HEADER = "path,probe_index,latency_ms"


class BenchError(Exception):
    """The benchmark could not run (bad target, missing robot, bad login)."""


@dataclass(frozen=True)
class BenchTarget:
    host: str = "127.0.0.1"
    http_port: int = 8080
    device_port: int = 9000
    frame_port: int = 9001

    @property
    def http_base(self) -> str:
        return f"http://{self.host}:{self.http_port}"

    @property
    def ws_url(self) -> str:
        return f"ws://{self.host}:{self.http_port}/ws/telemetry"


@dataclass
class LatencyReport:
    """Measured samples per path. ``samples[path]`` holds
    (probe_index, latency_ms) for every probe that completed;
    ``requested[path]`` is how many were attempted."""

    samples: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    requested: dict[str, int] = field(default_factory=dict)

    def add_path(self, path: str, requested: int,
                 samples: list[tuple[int, float]]) -> None:
        self.samples[path] = list(samples)
        self.requested[path] = requested

    def stats(self, path: str) -> dict:
        values = sorted(ms for _, ms in self.samples.get(path, ()))
        requested = self.requested.get(path, 0)
        out = {
            "requested": requested,
            "received": len(values),
            "lost": requested - len(values),
        }
        if values:
            out.update(
                min_ms=values[0],
                mean_ms=math.fsum(values) / len(values),
                p50_ms=percentile(values, 50),
                p95_ms=percentile(values, 95),
                p99_ms=percentile(values, 99),
                max_ms=values[-1],
            )
        return out

    def summary(self) -> dict:
        return {path: self.stats(path) for path in self.samples}


def percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile: the smallest value with at least q percent
    of the samples at or below it. ``sorted_values`` must be sorted and
    non-empty; q in (0, 100]."""
    if not sorted_values:
        raise ValueError("percentile of empty sample set")
    if not 0 < q <= 100:
        raise ValueError("q must be in (0, 100]")
    rank = math.ceil(q / 100 * len(sorted_values))
    return sorted_values[rank - 1]


# --------------------------------------------------------------------------
# Report serialization

def render_report(report: LatencyReport) -> str:
    lines = [CSV_HEADER]
    for path in report.samples:
        for index, ms in report.samples[path]:
            lines.append(f"{path},{index},{ms!r}")
    for path in report.samples:
        stats = report.stats(path)
        parts = [f"# path={path}"]
        parts.extend(
            f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}"
            for key, value in stats.items()
        )
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> LatencyReport:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"expected header {CSV_HEADER!r}")
    report = LatencyReport()
    for line in lines[1:]:
        if line.startswith("#"):
            fields = dict(
                part.split("=", 1) for part in line[1:].split() if "=" in part
            )
            if "path" not in fields or "requested" not in fields:
                raise ValueError(f"bad summary line: {line!r}")
            path = fields["path"]
            report.requested[path] = int(fields["requested"])
            report.samples.setdefault(path, [])
            continue
        path, index, ms = line.split(",")
        report.samples.setdefault(path, []).append((int(index), float(ms)))
    for path in report.samples:
        if path not in report.requested:
            raise ValueError(f"no summary line for path {path!r}")
    return report


def report_to_json(report: LatencyReport) -> str:
    return json.dumps(
        {
            path: {
                "samples": [[i, ms] for i, ms in report.samples[path]],
                **report.stats(path),
            }
            for path in report.samples
        },
        indent=2,
        sort_keys=True,
    )


# --------------------------------------------------------------------------
# Probes

class _BenchLink:
    """Minimal synchronous device link used by the TCP/UDP probes."""

    def __init__(self, target: BenchTarget, device_id: str, timeout_s: float):
        self.device_id = device_id
        self.timeout_s = timeout_s
        try:
            self.sock = socket.create_connection(
                (target.host, target.device_port), timeout=timeout_s
            )
        except OSError as exc:
            raise BenchError(f"cannot reach device port: {exc}") from exc
        self.sock.settimeout(timeout_s)
        self._decoder = EnvelopeDecoder()
        self._inbox: list[Envelope] = []
        self._seq = 0
        self.uuid = b""
        self._last_heartbeat = time.monotonic()

    def send(self, msg_type: str, payload: dict) -> None:
        self._seq += 1
        env = Envelope(
            msg_type=msg_type,
            seq=self._seq,
            timestamp_ms=int(time.time() * 1000),
            device_id=self.device_id,
            payload=payload,
        )
        self.sock.sendall(encode_envelope(env))

    def recv(self, msg_type: str, deadline: float) -> Envelope | None:
        while True:
            while self._inbox:
                env = self._inbox.pop(0)
                if env.msg_type == msg_type:
                    return env
                if env.msg_type == "error":
                    raise BenchError(f"gateway error: {env.payload.get('reason')}")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                return None
            if not data:
                raise BenchError("gateway closed the link")
            self._inbox.extend(self._decoder.feed(data))

    def register(self) -> None:
        self.send("hello", {"kind": "sensor", "channels": []})
        ack = self.recv("hello_ack", time.monotonic() + self.timeout_s)
        if ack is None:
            raise BenchError("no hello_ack from gateway")
        self.uuid = bytes.fromhex(ack.payload["device_uuid"])

    def keepalive(self) -> None:
        now = time.monotonic()
        if now - self._last_heartbeat >= 1.0:
            self.send("heartbeat", {})
            self._last_heartbeat = now

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def probe_stream(target: BenchTarget, n: int, *,
                 timeout_s: float = DEFAULT_TIMEOUT_S,
                 probe_id: str | None = None) -> list[tuple[int, float]]:
    """Round-trip latency of the TCP envelope path."""
    probe_id = probe_id or f"bench-stream-{uuid_mod.uuid4().hex[:8]}"
    link = _BenchLink(target, probe_id, timeout_s)
    samples: list[tuple[int, float]] = []
    try:
        link.register()
        for i in range(n):
            link.keepalive()
            started = time.monotonic()
            link.send("latency_probe", {"probe_index": i})
            while True:
                echo = link.recv("latency_echo", started + timeout_s)
                if echo is None:
                    break  # lost
                if echo.payload.get("probe_index") == i:
                    samples.append((i, (time.monotonic() - started) * 1000.0))
                    break
    finally:
        link.close()
    return samples


def probe_datagram(target: BenchTarget, n: int, *,
                   timeout_s: float = DEFAULT_TIMEOUT_S,
                   probe_id: str | None = None) -> list[tuple[int, float]]:
    """Round-trip latency of the UDP frame path using the echo flag. The
    probe registers over TCP first so the traffic is attributable to a
    device, then bounces one echo datagram per probe."""
    probe_id = probe_id or f"bench-datagram-{uuid_mod.uuid4().hex[:8]}"
    link = _BenchLink(target, probe_id, timeout_s)
    udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    samples: list[tuple[int, float]] = []
    try:
        link.register()
        addr = (target.host, target.frame_port)
        for i in range(n):
            link.keepalive()
            packet = FramePacket(
                device_uuid=link.uuid,
                frame_seq=i,
                chunk_index=0,
                chunk_count=1,
                timestamp_ms=int(time.time() * 1000),
                payload=b"echo-probe",
                flags=FLAG_ECHO,
            )
            wire = encode_frame_packet(packet)
            started = time.monotonic()
            udp.sendto(wire, addr)
            deadline = started + timeout_s
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break  # lost
                udp.settimeout(remaining)
                try:
                    data, _ = udp.recvfrom(65536)
                except socket.timeout:
                    break
                try:
                    echoed = decode_frame_packet(data)
                except Exception:
                    continue
                if echoed.frame_seq == i and echoed.device_uuid == link.uuid:
                    samples.append((i, (time.monotonic() - started) * 1000.0))
                    break
    finally:
        udp.close()
        link.close()
    return samples


def probe_end_to_end(target: BenchTarget, n: int, *, username: str,
                     password: str, robot_id: str,
                     timeout_s: float = DEFAULT_TIMEOUT_S,
                     dt: float = 0.02) -> list[tuple[int, float]]:
    """Operator-loop latency: POST a command that requests zero displacement
    (v_h = 0, no goal blending) and wait until the robot's state report for
    that command sequence number arrives on the telemetry WebSocket."""
    samples: list[tuple[int, float]] = []
    with httpx.Client(base_url=target.http_base, timeout=timeout_s) as client:
        resp = client.post(
            "/api/login", json={"username": username, "password": password}
        )
        if resp.status_code != 200:
            raise BenchError(f"login failed: {resp.status_code} {resp.text}")
        token = resp.json()["token"]
        headers = {"Authorization": f"Bearer {token}"}
        detail = client.get(f"/api/devices/{robot_id}", headers=headers)
        if detail.status_code != 200:
            raise BenchError(f"robot {robot_id!r} not found")
        dof = detail.json()["dof"]
        resp = client.post(f"/api/robots/{robot_id}/acquire", headers=headers)
        if resp.status_code != 200:
            raise BenchError(
                f"cannot acquire {robot_id!r}: {resp.status_code} {resp.text}"
            )
        try:
            ws = ws_connect(
                f"{target.ws_url}?token={token}&topics=robot_state",
                open_timeout=timeout_s,
            )
        except Exception as exc:
            client.post(f"/api/robots/{robot_id}/release", headers=headers)
            raise BenchError(f"websocket connect failed: {exc}") from exc
        try:
            body = {"v_h": [0.0] * dof, "dt": dt, "m": 0.0}
            for i in range(n):
                started = time.monotonic()
                resp = client.post(
                    f"/api/robots/{robot_id}/command", json=body, headers=headers
                )
                if resp.status_code != 200:
                    raise BenchError(
                        f"command rejected: {resp.status_code} {resp.text}"
                    )
                cmd_seq = resp.json()["cmd_seq"]
                deadline = started + timeout_s
                while True:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break  # lost
                    try:
                        event = json.loads(ws.recv(timeout=remaining))
                    except TimeoutError:
                        break
                    if (
                        event.get("device_id") == robot_id
                        and event.get("payload", {}).get("last_cmd_seq") == cmd_seq
                    ):
                        samples.append(
                            (i, (time.monotonic() - started) * 1000.0)
                        )
                        break
        finally:
            try:
                ws.close()
            finally:
                client.post(f"/api/robots/{robot_id}/release", headers=headers)
                client.post("/api/logout", headers=headers)
    return samples


def run_bench(target: BenchTarget, paths: list[str], n: int, *,
              username: str | None = None, password: str | None = None,
              robot_id: str | None = None,
              timeout_s: float = DEFAULT_TIMEOUT_S) -> LatencyReport:
    report = LatencyReport()
    for path in paths:
        if path == "stream":
            samples = probe_stream(target, n, timeout_s=timeout_s)
        elif path == "datagram":
            samples = probe_datagram(target, n, timeout_s=timeout_s)
        elif path == "e2e":
            if not (username and password and robot_id):
                raise BenchError(
                    "the e2e path needs --user, --password, and --robot"
                )
            samples = probe_end_to_end(
                target, n, username=username, password=password,
                robot_id=robot_id, timeout_s=timeout_s,
            )
        else:
            raise BenchError(f"unknown path {path!r}; choose from {PATHS}")
        report.add_path(path, n, samples)
    return report
