#!/usr/bin/env python3
"""One-command live demo: gateway + a simulated household + a scripted tour.

Starts the cloud gateway with seeded demo accounts and an inspection rule,
connects the simulated fleet (one 7-dof arm, two ambient sensors, one
camera), then plays a short operator tour over the public REST/WebSocket
API: a few teleop nudges, an autonomous goal, and — once the bedroom
sensor goes anomalous about 12 s in — the automatic inspection mission,
followed live from the telemetry stream. Afterwards the stack stays up
for manual poking (web console, `iohrt bench latency`, curl) until Ctrl-C.

Usage:
    python scripts/run_demo.py [--http-port 8080] [--duration 60]
"""

from __future__ import annotations

import argparse
import asyncio
import contextlib
import signal
import sys
import tempfile

import aiohttp

from iohrt.config import AnomalyRuleConfig, GatewayConfig, UserSeed
from iohrt.edgesim import GatewayTarget, demo_fleet
from iohrt.gateway import Gateway

DEMO_USERS = [
    UserSeed("demo-admin", "demo-admin-pw-1", "admin"),
    UserSeed("demo-op", "demo-operator-pw-1", "operator"),
    UserSeed("demo-view", "demo-viewer-pw-1", "viewer"),
]

# Inspection waypoint for the 7-dof arm: shoulder/elbow swing plus a
# half-open gripper, comfortably inside the pick-and-place workspace.
INSPECT_GOAL = (0.4, -0.3, 0.2, 0.0, 0.0, 0.0, 0.5)

DEMO_RULES = [
    AnomalyRuleConfig("temperature", 10.0, 35.0, "robot-7dof", INSPECT_GOAL),
    AnomalyRuleConfig("humidity", 20.0, 80.0, "robot-7dof", INSPECT_GOAL),
]


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--http-port", type=int, default=8080)
    parser.add_argument("--device-port", type=int, default=9000)
    parser.add_argument("--frame-port", type=int, default=9001)
    parser.add_argument("--store", help="store directory (default: temp dir)")
    parser.add_argument("--static", help="serve a web console bundle from here")
    parser.add_argument(
        "--duration", type=float,
        help="shut down this many seconds after the tour (default: Ctrl-C)",
    )
    parser.add_argument("--skip-tour", action="store_true",
                        help="just run the stack, no scripted operator")
    return parser.parse_args(argv)


async def print_events(session: aiohttp.ClientSession, base: str, token: str,
                       stop: asyncio.Event) -> None:
    """Mirror alert/mission/device events from the telemetry socket."""
    url = f"{base}/ws/telemetry?token={token}&topics=alert,mission,device"
    try:
        async with session.ws_connect(url) as ws:
            while not stop.is_set():
                msg = await ws.receive(timeout=3600)
                if msg.type != aiohttp.WSMsgType.TEXT:
                    break
                event = msg.json()
                print(f"  [event] {event['type']:<8} "
                      f"{event.get('device_id') or '-':<14} {event['payload']}")
    except (aiohttp.ClientError, asyncio.TimeoutError):
        pass


async def tour(base: str, stop: asyncio.Event) -> None:
    async with aiohttp.ClientSession() as session:
        async def api(method: str, path: str, **kwargs):
            async with session.request(method, base + path, **kwargs) as resp:
                body = await resp.json()
                if resp.status >= 400:
                    raise RuntimeError(f"{method} {path} -> {resp.status}: {body}")
                return body

        login = await api("POST", "/api/login", json={
            "username": "demo-op", "password": "demo-operator-pw-1"})
        auth = {"Authorization": f"Bearer {login['token']}"}
        print(f"\n-- tour: logged in as demo-op (role {login['role']})")

        watcher = asyncio.create_task(
            print_events(session, base, login["token"], stop))

        for _ in range(100):
            devices = (await api("GET", "/api/devices", headers=auth))["devices"]
            if sum(d["state"] == "connected" for d in devices) >= 4:
                break
            await asyncio.sleep(0.1)
        print(f"-- {len(devices)} devices registered: "
              + ", ".join(d["id"] for d in devices))

        await api("POST", "/api/robots/robot-7dof/acquire", headers=auth)
        print("-- acquired exclusive control of robot-7dof; nudging joints")
        for v_h in ([0.4, 0, 0, 0, 0, 0, 0],
                    [0, 0.4, 0, 0, 0, 0, 0],
                    [-0.4, -0.4, 0, 0, 0, 0, 0]):
            ack = await api("POST", "/api/robots/robot-7dof/command",
                            headers=auth,
                            json={"v_h": v_h, "dt": 0.25, "m": 0.0})
            rounded = [round(x, 3) for x in ack["setpoint"]]
            print(f"   teleop step {ack['cmd_seq']}: setpoint {rounded}")

        await api("POST", "/api/robots/robot-7dof/goal", headers=auth,
                  json={"goal": [0.0] * 6 + [0.5]})
        print("-- sent the arm home autonomously; waiting for arrival")
        for _ in range(100):
            detail = await api("GET", "/api/devices/robot-7dof", headers=auth)
            pose = detail.get("reported_pose")
            if pose and max(abs(p - g) for p, g in
                            zip(pose, [0.0] * 6 + [0.5])) < 2e-3:
                break
            await asyncio.sleep(0.1)
        print("-- arm is home; releasing control")
        await api("POST", "/api/robots/robot-7dof/release", headers=auth)

        print("-- waiting for the bedroom sensor to overheat (~12 s in)...")
        mission = None
        for _ in range(300):
            missions = (await api("GET", "/api/missions", headers=auth))["missions"]
            if missions:
                mission = missions[-1]
                break
            await asyncio.sleep(0.1)
        if mission is None:
            print("-- no mission appeared (unexpected); tour ends early")
        else:
            print(f"-- inspection {mission['id']} dispatched to "
                  f"{mission['target_robot']} "
                  f"(cause: {mission['cause']['channel']}="
                  f"{mission['cause']['value']})")
            for _ in range(300):
                missions = (await api("GET", "/api/missions", headers=auth))["missions"]
                if missions and missions[-1]["status"] == "done":
                    print("-- inspection complete: the arm reached the waypoint")
                    break
                await asyncio.sleep(0.1)

        watcher.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await watcher
        await api("POST", "/api/logout", headers=auth)


async def main_async(args: argparse.Namespace) -> int:
    store = args.store or tempfile.mkdtemp(prefix="iohrt-demo-")
    config = GatewayConfig(
        host=args.host,
        http_port=args.http_port,
        device_port=args.device_port,
        frame_port=args.frame_port,
        store_dir=store,
        users=list(DEMO_USERS),
        rules=list(DEMO_RULES),
        static_dir=args.static,
    )
    config.validate()

    gateway = Gateway(config)
    await gateway.start()
    base = f"http://{config.host}:{gateway.http_port}"
    print(f"gateway: {base}  (devices tcp/{gateway.device_port}, "
          f"frames udp/{gateway.frame_port}, store {store})", flush=True)
    print("accounts: " + "  ".join(
        f"{u.username}/{u.password} ({u.role})" for u in DEMO_USERS), flush=True)

    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        with contextlib.suppress(NotImplementedError, RuntimeError):
            loop.add_signal_handler(sig, stop.set)

    fleet = demo_fleet(GatewayTarget(
        host=config.host,
        device_port=gateway.device_port,
        frame_port=gateway.frame_port,
    ))
    fleet_task = asyncio.ensure_future(fleet.run(stop))

    try:
        if not args.skip_tour:
            await tour(base, stop)
            print(f"\ntour done — the stack stays up at {base} "
                  "(camera stream: /api/cameras/cam-living/stream)")
        if args.duration is not None:
            loop.call_later(args.duration, stop.set)
        await stop.wait()
    finally:
        stop.set()
        await fleet_task
        await gateway.stop()
    return 0


def main(argv: list[str]) -> int:
    try:
        return asyncio.run(main_async(parse_args(argv)))
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
