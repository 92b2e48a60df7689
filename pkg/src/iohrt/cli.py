"""Command-line entry point.

One binary, subcommand style:

- ``iohrt serve``          run the gateway
- ``iohrt sim``            run a simulated device fleet against a gateway
- ``iohrt bench latency``  measure stream / datagram / end-to-end latency
- ``iohrt admin``          manage the local user store (add-user, set-role)
- ``iohrt replay``         re-issue a logged operator session against a robot
- ``iohrt demo``           boot a gateway plus a default fleet in one process

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import math
import signal
import sys
import time
from pathlib import Path

import httpx

from .auth import AuthService, Role
from .config import ConfigError, load_gateway_config
from .edgesim import demo_fleet, fleet_from_dict, GatewayTarget
from .latencybench import (
    BenchError,
    BenchTarget,
    PATHS,
    render_report,
    report_to_json,
    run_bench,
)
from .store import RecordLog, StoreError

log = logging.getLogger("iohrt.cli")

REPLAY_TOLERANCE = 1e-9


class ReplayError(Exception):
    pass


# --------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iohrt",
        description="Teleoperation gateway for humans and robotic things",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="increase log verbosity (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    serve = sub.add_parser("serve", help="run the gateway service")
    serve.add_argument("--config", help="gateway config file (JSON); "
                                        "defaults to $IOHRT_CONFIG")
    serve.add_argument("--host", help="bind address (overrides config)")
    serve.add_argument("--http-port", type=int, help="REST/WebSocket port")
    serve.add_argument("--device-port", type=int, help="TCP device link port")
    serve.add_argument("--frame-port", type=int, help="UDP frame port")
    serve.add_argument("--store", help="durable store directory")
    serve.add_argument("--static", help="directory with the operator console "
                                        "bundle, served at /")
    serve.set_defaults(handler=cmd_serve)

    sim = sub.add_parser("sim", help="run a simulated device fleet")
    sim.add_argument("--config", required=True, help="fleet config file (JSON)")
    sim.add_argument("--host", help="gateway host (overrides fleet config)")
    sim.add_argument("--device-port", type=int, help="gateway device port")
    sim.add_argument("--frame-port", type=int, help="gateway frame port")
    sim.add_argument("--duration", type=float,
                     help="stop after this many seconds (default: run forever)")
    sim.set_defaults(handler=cmd_sim)

    bench = sub.add_parser("bench", help="measure gateway latency")
    bench_sub = bench.add_subparsers(dest="bench_command", metavar="what")
    latency = bench_sub.add_parser("latency", help="round-trip latency probes")
    latency.add_argument("--path", action="append", choices=PATHS,
                         help="measurement path (repeatable; default: stream)")
    latency.add_argument("--n", type=int, default=100,
                         help="probes per path (default 100)")
    latency.add_argument("--out", help="write the CSV report to this file")
    latency.add_argument("--json", action="store_true",
                         help="emit JSON instead of CSV")
    latency.add_argument("--host", default="127.0.0.1")
    latency.add_argument("--http-port", type=int, default=8080)
    latency.add_argument("--device-port", type=int, default=9000)
    latency.add_argument("--frame-port", type=int, default=9001)
    latency.add_argument("--timeout", type=float, default=5.0,
                         help="per-probe timeout in seconds")
    latency.add_argument("--user", help="operator username (e2e path)")
    latency.add_argument("--password", help="operator password (e2e path)")
    latency.add_argument("--robot", help="target robot id (e2e path)")
    latency.set_defaults(handler=cmd_bench_latency)

    admin = sub.add_parser("admin", help="manage the local user store")
    admin_sub = admin.add_subparsers(dest="admin_command", metavar="action")
    add_user = admin_sub.add_parser("add-user", help="create an account")
    add_user.add_argument("--store", required=True,
                          help="gateway store directory")
    add_user.add_argument("--username", required=True)
    add_user.add_argument("--password", required=True)
    add_user.add_argument("--role", default="viewer",
                          choices=[r.render() for r in Role])
    add_user.set_defaults(handler=cmd_admin_add_user)
    set_role = admin_sub.add_parser("set-role", help="change an account role")
    set_role.add_argument("--store", required=True,
                          help="gateway store directory")
    set_role.add_argument("--username", required=True)
    set_role.add_argument("--role", required=True,
                          choices=[r.render() for r in Role])
    set_role.set_defaults(handler=cmd_admin_set_role)

    replay = sub.add_parser(
        "replay", help="re-issue a logged operator session against a robot")
    replay.add_argument("--session", required=True, help="session id to replay")
    replay.add_argument("--robot", required=True, help="target robot id")
    replay.add_argument("--host", default="127.0.0.1")
    replay.add_argument("--http-port", type=int, default=8080)
    replay.add_argument("--user", required=True, help="operator username")
    replay.add_argument("--password", required=True, help="operator password")
    replay.add_argument("--pace", type=float, default=1.0,
                        help="pacing multiplier for logged command intervals "
                             "(0 replays as fast as possible)")
    replay.set_defaults(handler=cmd_replay)

    demo = sub.add_parser(
        "demo", help="boot a gateway plus a default simulated fleet")
    demo.add_argument("--host", default="127.0.0.1")
    demo.add_argument("--http-port", type=int, default=8080)
    demo.add_argument("--device-port", type=int, default=9000)
    demo.add_argument("--frame-port", type=int, default=9001)
    demo.add_argument("--store", help="durable store directory")
    demo.add_argument("--static", help="operator console bundle directory")
    demo.add_argument("--duration", type=float,
                      help="stop after this many seconds")
    demo.set_defaults(handler=cmd_demo)

    return parser


# --------------------------------------------------------------------------
# serve / sim / demo

def _signal_stop(loop: asyncio.AbstractEventLoop, stop: asyncio.Event) -> None:
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass


def serve_config(args):
    """Resolve the gateway config for ``serve``: file (or $IOHRT_CONFIG),
    then environment, then flags — later sources win."""
    config = load_gateway_config(args.config)
    if args.host is not None:
        config.host = args.host
    if args.http_port is not None:
        config.http_port = args.http_port
    if args.device_port is not None:
        config.device_port = args.device_port
    if args.frame_port is not None:
        config.frame_port = args.frame_port
    if args.store is not None:
        config.store_dir = args.store
    if args.static is not None:
        config.static_dir = args.static
    config.validate()
    return config


def cmd_serve(args) -> int:
    from .gateway import Gateway

    config = serve_config(args)

    async def run() -> None:
        gateway = Gateway(config)
        await gateway.start()
        print(
            f"gateway up: http://{config.host}:{gateway.http_port} "
            f"devices tcp/{gateway.device_port} frames udp/{gateway.frame_port}",
            flush=True,
        )
        stop = asyncio.Event()
        _signal_stop(asyncio.get_running_loop(), stop)
        await stop.wait()
        print("shutting down", flush=True)
        await gateway.stop()

    asyncio.run(run())
    return 0


def _run_fleet(fleet, duration: float | None) -> int:
    async def run() -> None:
        stop = asyncio.Event()
        _signal_stop(asyncio.get_running_loop(), stop)
        if duration is not None:
            asyncio.get_running_loop().call_later(duration, stop.set)
        await fleet.run(stop)

    asyncio.run(run())
    return 0


def cmd_sim(args) -> int:
    try:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read fleet config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"fleet config {args.config} is not valid JSON: {exc}") from exc
    if isinstance(data, dict):
        gw = dict(data.get("gateway", {}))
        if args.host is not None:
            gw["host"] = args.host
        if args.device_port is not None:
            gw["device_port"] = args.device_port
        if args.frame_port is not None:
            gw["frame_port"] = args.frame_port
        data["gateway"] = gw
    fleet = fleet_from_dict(data)
    print(
        f"fleet of {len(fleet.devices)} device(s) -> "
        f"{fleet.target.host} tcp/{fleet.target.device_port}",
        flush=True,
    )
    return _run_fleet(fleet, args.duration)


def cmd_demo(args) -> int:
    from .gateway import Gateway

    config = load_gateway_config(None)
    config.host = args.host
    config.http_port = args.http_port
    config.device_port = args.device_port
    config.frame_port = args.frame_port
    if args.store is not None:
        config.store_dir = args.store
    if args.static is not None:
        config.static_dir = args.static
    config.validate()

    async def run() -> None:
        gateway = Gateway(config)
        await gateway.start()
        fleet = demo_fleet(GatewayTarget(
            host=config.host,
            device_port=gateway.device_port,
            frame_port=gateway.frame_port,
        ))
        print(
            f"demo up: http://{config.host}:{gateway.http_port} "
            f"({len(fleet.devices)} simulated devices; seed users from config)",
            flush=True,
        )
        stop = asyncio.Event()
        _signal_stop(asyncio.get_running_loop(), stop)
        if args.duration is not None:
            asyncio.get_running_loop().call_later(args.duration, stop.set)
        fleet_task = asyncio.ensure_future(fleet.run(stop))
        await stop.wait()
        await fleet_task
        await gateway.stop()

    asyncio.run(run())
    return 0


# --------------------------------------------------------------------------
# bench

def cmd_bench_latency(args) -> int:
    target = BenchTarget(
        host=args.host,
        http_port=args.http_port,
        device_port=args.device_port,
        frame_port=args.frame_port,
    )
    paths = args.path or ["stream"]
    report = run_bench(
        target, paths, args.n,
        username=args.user, password=args.password, robot_id=args.robot,
        timeout_s=args.timeout,
    )
    rendered = report_to_json(report) if args.json else render_report(report)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
        for path in paths:
            stats = report.stats(path)
            mean = stats.get("mean_ms")
            mean_text = f"{mean:.3f} ms" if mean is not None else "n/a"
            print(
                f"{path}: {stats['received']}/{stats['requested']} probes, "
                f"mean {mean_text}",
                flush=True,
            )
        print(f"report written to {args.out}", flush=True)
    else:
        sys.stdout.write(rendered)
    return 0


# --------------------------------------------------------------------------
# admin (local user store)

def _auth_from_store(store_dir: str) -> AuthService:
    root = Path(store_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        return AuthService(users_log=RecordLog(root / "users.log"))
    except (OSError, StoreError) as exc:
        raise ConfigError(f"cannot open user store in {store_dir}: {exc}") from exc


def cmd_admin_add_user(args) -> int:
    auth = _auth_from_store(args.store)
    if auth.has_user(args.username):
        raise ConfigError(f"user {args.username!r} already exists")
    auth.bootstrap_user(args.username, args.password, Role.parse(args.role))
    print(f"created {args.username} ({args.role})", flush=True)
    return 0


def cmd_admin_set_role(args) -> int:
    auth = _auth_from_store(args.store)
    try:
        auth.force_role(args.username, Role.parse(args.role))
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"{args.username} is now {args.role}", flush=True)
    return 0


# --------------------------------------------------------------------------
# replay

def cmd_replay(args) -> int:
    final = replay_session(
        http_base=f"http://{args.host}:{args.http_port}",
        session_id=args.session,
        robot_id=args.robot,
        username=args.user,
        password=args.password,
        pace=args.pace,
    )
    print(json.dumps({"robot": args.robot, "final_pose": final}), flush=True)
    return 0


def replay_session(*, http_base: str, session_id: str, robot_id: str,
                   username: str, password: str, pace: float = 1.0,
                   timeout_s: float = 10.0) -> list[float]:
    """Re-issue every logged command of one robot's session through the
    normal command endpoint, pacing by the logged intervals. Returns the
    final commanded pose; raises ReplayError if it diverges from the log
    by more than the replay tolerance on any axis."""
    with httpx.Client(base_url=http_base, timeout=timeout_s) as client:
        resp = client.post(
            "/api/login", json={"username": username, "password": password}
        )
        if resp.status_code != 200:
            raise ReplayError(f"login failed: {_error_text(resp)}")
        headers = {"Authorization": f"Bearer {resp.json()['token']}"}
        try:
            resp = client.get(f"/api/sessions/{session_id}", headers=headers)
            if resp.status_code != 200:
                raise ReplayError(
                    f"cannot read session {session_id!r}: {_error_text(resp)}")
            entries = [e for e in resp.json()["entries"]
                       if e["device_id"] == robot_id]
            if not entries:
                print(
                    f"session {session_id} holds no commands for {robot_id}; "
                    "nothing to replay",
                    flush=True,
                )
                detail = client.get(f"/api/devices/{robot_id}", headers=headers)
                if detail.status_code == 200 and "setpoint" in detail.json():
                    return detail.json()["setpoint"]
                return []

            resp = client.post(f"/api/robots/{robot_id}/acquire", headers=headers)
            if resp.status_code != 200:
                raise ReplayError(
                    f"cannot acquire {robot_id!r}: {_error_text(resp)}")
            try:
                resp = client.post(
                    f"/api/robots/{robot_id}/reset",
                    json={"pose": entries[0]["prev_pose"]},
                    headers=headers,
                )
                if resp.status_code != 200:
                    raise ReplayError(f"cannot reset pose: {_error_text(resp)}")
                final = entries[0]["prev_pose"]
                for entry in entries:
                    resp = client.post(
                        f"/api/robots/{robot_id}/command",
                        json={
                            "v_h": entry["v_h"],
                            "dt": entry["dt"],
                            "gamma": entry["gamma"],
                            "m": entry["m"],
                            "v_r": entry["v_r"],
                        },
                        headers=headers,
                    )
                    if resp.status_code != 200:
                        raise ReplayError(
                            f"command rejected during replay: {_error_text(resp)}")
                    final = resp.json()["setpoint"]
                    if pace > 0:
                        time.sleep(entry["dt"] * pace)
                logged = entries[-1]["pose"]
                drift = max(
                    abs(a - b) for a, b in zip(final, logged)
                ) if final else 0.0
                if drift > REPLAY_TOLERANCE or any(
                    not math.isfinite(v) for v in final
                ):
                    raise ReplayError(
                        f"replay diverged from the log by {drift:g} "
                        f"(tolerance {REPLAY_TOLERANCE:g})")
                return final
            finally:
                client.post(f"/api/robots/{robot_id}/release", headers=headers)
        finally:
            client.post("/api/logout", headers=headers)


def _error_text(resp: httpx.Response) -> str:
    try:
        error = resp.json()["error"]
        return f"{resp.status_code} {error['code']}: {error['message']}"
    except Exception:
        return f"{resp.status_code} {resp.text[:200]}"


# --------------------------------------------------------------------------
# entry point

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 0 for --help, 2 for usage
        return 0 if exc.code == 0 else 1
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    if getattr(args, "handler", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.handler(args)
    except (ConfigError, BenchError, ReplayError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
