"""Tests for the simulated edge devices: deterministic signal sources,
goal-seeking motion, and live behaviour against a running gateway."""

import io
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from conftest import FleetRunner, wait_until

from iohrt.config import ConfigError
from iohrt.edgesim import (
    SCENARIOS,
    CameraSimConfig,
    GatewayTarget,
    RobotSimConfig,
    SensorSimConfig,
    SimRobot,
    demo_fleet,
    fleet_from_dict,
    load_fleet,
    render_frame,
    sensor_values,
)


def take(iterator, n):
    return list(itertools.islice(iterator, n))


class TestSensorSignal:
    def test_same_config_same_sequence(self):
        cfg = SensorSimConfig(id="s", seed=42, sigma=0.1)
        assert take(sensor_values(cfg), 200) == take(sensor_values(cfg), 200)

    def test_different_seeds_differ(self):
        a = SensorSimConfig(id="s", seed=1, sigma=0.1)
        b = SensorSimConfig(id="s", seed=2, sigma=0.1)
        assert take(sensor_values(a), 50) != take(sensor_values(b), 50)

    def test_zero_sigma_is_flat(self):
        cfg = SensorSimConfig(id="s", seed=7, sigma=0.0, base=21.5)
        assert take(sensor_values(cfg), 20) == [21.5] * 20

    def test_anomaly_window_offsets_values(self):
        cfg = SensorSimConfig(
            id="s", seed=3, sigma=0.0, base=20.0, rate_hz=2.0,
            anomaly_at_s=5.0, anomaly_magnitude=50.0, anomaly_duration_s=2.0,
        )
        values = take(sensor_values(cfg), 20)
        # rate 2 Hz: anomaly spans samples [10, 14)
        assert values[:10] == [20.0] * 10
        assert values[10:14] == [70.0] * 4
        assert values[14:] == [20.0] * 6

    @given(
        seed=st.integers(0, 2**32),
        sigma=st.floats(0.0, 2.0),
        base=st.floats(-100.0, 100.0),
    )
    @settings(max_examples=40, deadline=None)
    def test_walk_reproducible_for_any_config(self, seed, sigma, base):
        cfg = SensorSimConfig(id="s", seed=seed, sigma=sigma, base=base)
        assert take(sensor_values(cfg), 30) == take(sensor_values(cfg), 30)

    def test_validation(self):
        with pytest.raises(ConfigError):
            SensorSimConfig(id="s", rate_hz=0.0).validate()
        with pytest.raises(ConfigError):
            SensorSimConfig(id="s", channel="").validate()
        with pytest.raises(ConfigError):
            SensorSimConfig(id="s", sigma=-1.0).validate()


class TestCameraFrames:
    def test_frames_deterministic_per_seed_and_seq(self):
        cfg = CameraSimConfig(id="c", seed=9)
        assert render_frame(cfg, 1) == render_frame(cfg, 1)
        assert render_frame(cfg, 1) != render_frame(cfg, 2)
        other = CameraSimConfig(id="c", seed=10)
        assert render_frame(cfg, 1) != render_frame(other, 1)

    def test_frames_are_decodable_jpegs_at_configured_size(self):
        cfg = CameraSimConfig(id="c", seed=4, width=160, height=120)
        for seq in (1, 2, 77):
            image = Image.open(io.BytesIO(render_frame(cfg, seq)))
            assert image.format == "JPEG"
            assert image.size == (160, 120)

    def test_validation(self):
        with pytest.raises(ConfigError):
            CameraSimConfig(id="c", fps=0).validate()
        with pytest.raises(ConfigError):
            CameraSimConfig(id="c", drop_rate=1.0).validate()
        with pytest.raises(ConfigError):
            CameraSimConfig(id="c", width=2).validate()


class TestRobotMotion:
    def make_robot(self, scenario="generic"):
        return SimRobot(GatewayTarget(), RobotSimConfig(id="r", scenario=scenario))

    def test_scenarios_expose_expected_shapes(self):
        assert SCENARIOS["generic"].dof == 3
        assert SCENARIOS["pick_place_7dof"].dof == 7
        # last axis is a normalized gripper
        assert SCENARIOS["pick_place_7dof"].params.workspace[-1] == (0.0, 1.0)
        assert SCENARIOS["microsurgery_4dof"].params.gamma == 0.2

    def test_step_without_goal_is_a_no_op(self):
        robot = self.make_robot()
        pose = robot.pose
        robot.step(0.05)
        assert robot.pose == pose

    def test_goal_error_is_monotone_and_reaches_goal(self):
        robot = self.make_robot()
        robot.goal = (0.5, -0.25, 0.75)
        goal = robot.goal
        errors = []
        for _ in range(2000):
            if robot.goal is None:
                break
            errors.append(max(abs(g - p) for g, p in zip(goal, robot.pose)))
            robot.step(0.05)
        assert robot.goal is None, "robot never arrived"
        assert robot.pose == goal  # snaps exactly once within tolerance
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    def test_motion_stays_inside_workspace(self):
        robot = self.make_robot("microsurgery_4dof")
        robot.goal = (10.0, -10.0, 10.0, 10.0)  # far outside the workspace
        for _ in range(500):
            robot.step(0.05)
            for value, (lo, hi) in zip(robot.pose, robot.params.workspace):
                assert lo <= value <= hi

    def test_trajectory_is_deterministic(self):
        poses = []
        for _ in range(2):
            robot = self.make_robot("pick_place_7dof")
            robot.goal = (0.2, -0.4, 0.6, -0.8, 1.0, -1.2, 0.9)
            trace = []
            for _ in range(100):
                robot.step(0.05)
                trace.append(robot.pose)
            poses.append(trace)
        assert poses[0] == poses[1]

    def test_rate_clamp_limits_per_tick_travel(self):
        robot = self.make_robot()
        robot.goal = (1.0, 1.0, 1.0)
        before = robot.pose
        robot.step(0.05)
        for prev, cur, vmax in zip(before, robot.pose, robot.params.v_max):
            assert abs(cur - prev) <= vmax * 0.05 + 1e-12


class TestFleetConfig:
    def test_demo_fleet_builds(self):
        fleet = demo_fleet(GatewayTarget())
        kinds = sorted(dev.kind for dev in fleet.devices)
        assert kinds == ["camera", "robot", "sensor", "sensor"]
        assert fleet.device("robot-7dof").dof == 7

    def test_load_fleet_roundtrip(self, tmp_path):
        path = tmp_path / "fleet.json"
        path.write_text(
            '{"gateway": {"host": "127.0.0.1", "device_port": 1, "frame_port": 2},'
            ' "devices": [{"kind": "sensor", "id": "s-1", "rate_hz": 4.0}]}'
        )
        fleet = load_fleet(path)
        assert fleet.target.device_port == 1
        assert fleet.devices[0].config.rate_hz == 4.0

    def test_config_rejections(self, tmp_path):
        bad = [
            {},  # no devices
            {"devices": []},
            {"devices": [{"kind": "toaster", "id": "t"}]},
            {"devices": [{"kind": "sensor"}]},  # missing id
            {"devices": [{"kind": "sensor", "id": "s", "bogus": 1}]},
            {"devices": [{"kind": "sensor", "id": "a"},
                         {"kind": "sensor", "id": "a"}]},  # duplicate ids
        ]
        for data in bad:
            with pytest.raises(ConfigError):
                fleet_from_dict(data)
        missing = tmp_path / "nope.json"
        with pytest.raises(ConfigError):
            load_fleet(missing)
        garbled = tmp_path / "broken.json"
        garbled.write_text("{not json")
        with pytest.raises(ConfigError):
            load_fleet(garbled)


class TestLiveFleet:
    def test_sensor_streams_readings_into_store(self, harness, client, run_fleet):
        run_fleet([{
            "kind": "sensor", "id": "sim-temp-a", "channel": "temperature",
            "unit": "C", "base": 22.0, "sigma": 0.0, "rate_hz": 20.0, "seed": 1,
        }])
        viewer = harness.auth_headers(client, "view-ann", "viewe-pass-1")

        def readings():
            resp = client.get(
                "/api/sensors/sim-temp-a/readings",
                params={"channel": "temperature", "limit": 50},
                headers=viewer,
            )
            if resp.status_code != 200:
                return None
            rows = resp.json()["readings"]
            return rows if len(rows) >= 5 else None

        rows = wait_until(readings)
        assert all(row["value"] == 22.0 for row in rows)
        assert all(row["unit"] == "C" for row in rows)

    def test_camera_streams_decodable_frames(self, harness, client, run_fleet):
        run_fleet([{
            "kind": "camera", "id": "sim-cam-a", "fps": 30.0, "seed": 2,
        }])
        viewer = harness.auth_headers(client, "view-ann", "viewe-pass-1")

        def latest():
            resp = client.get("/api/cameras/sim-cam-a/frame", headers=viewer)
            return resp if resp.status_code == 200 else None

        resp = wait_until(latest)
        image = Image.open(io.BytesIO(resp.content))
        assert image.format == "JPEG"
        assert image.size == (320, 240)
        first_seq = int(resp.headers["X-Frame-Seq"])
        resp2 = wait_until(
            lambda: (lambda r: r if r.status_code == 200
                     and int(r.headers["X-Frame-Seq"]) > first_seq else None)(
                client.get("/api/cameras/sim-cam-a/frame", headers=viewer)))
        assert int(resp2.headers["X-Frame-Seq"]) > first_seq

    def test_teleop_command_moves_simulated_robot(self, harness, client, run_fleet):
        fleet = run_fleet([{
            "kind": "robot", "id": "sim-bot-a", "scenario": "generic",
            "state_rate_hz": 50.0,
        }])
        operator = harness.auth_headers(client, "op-kim", "opera-pass-1")
        viewer = harness.auth_headers(client, "view-ann", "viewe-pass-1")
        wait_until(lambda: client.get(
            "/api/devices/sim-bot-a", headers=viewer).status_code == 200)
        assert client.post("/api/robots/sim-bot-a/acquire",
                           headers=operator).status_code == 200
        out = client.post(
            "/api/robots/sim-bot-a/command",
            json={"v_h": [0.5, 0.0, -0.5], "dt": 0.1},
            headers=operator,
        ).json()
        assert out["setpoint"] == [0.05, 0.0, -0.05]
        # the robot adopts the setpoint as its pose and reports it back
        wait_until(lambda: client.get(
            "/api/devices/sim-bot-a", headers=viewer,
        ).json().get("reported_pose") == [0.05, 0.0, -0.05])
        robot = fleet.device("sim-bot-a")
        assert robot.last_cmd_seq == out["cmd_seq"]
        client.post("/api/robots/sim-bot-a/release", headers=operator)

    def test_goal_drives_robot_to_arrival(self, harness, client, run_fleet):
        run_fleet([{
            "kind": "robot", "id": "sim-bot-b", "scenario": "generic",
            "state_rate_hz": 50.0,
        }])
        operator = harness.auth_headers(client, "op-kim", "opera-pass-1")
        wait_until(lambda: client.get(
            "/api/devices/sim-bot-b", headers=operator).status_code == 200)
        client.post("/api/robots/sim-bot-b/acquire", headers=operator)
        resp = client.post("/api/robots/sim-bot-b/goal",
                           json={"goal": [0.3, -0.3, 0.2]}, headers=operator)
        assert resp.status_code == 200

        def arrived():
            detail = client.get("/api/devices/sim-bot-b", headers=operator).json()
            pose = detail.get("reported_pose")
            return pose == [0.3, -0.3, 0.2]

        wait_until(arrived, timeout=15)
        client.post("/api/robots/sim-bot-b/release", headers=operator)

    def test_anomalous_sensor_triggers_mission_robot_completes(
            self, harness, client, run_fleet):
        # rule from the harness config: temperature above 35 dispatches
        # robot-7dof to (0.5, 0.5, 0.5); generic scenario covers that goal
        run_fleet([
            {"kind": "robot", "id": "robot-7dof", "scenario": "generic",
             "state_rate_hz": 50.0},
            {"kind": "sensor", "id": "sim-temp-hot", "channel": "temperature",
             "unit": "C", "base": 22.0, "sigma": 0.0, "rate_hz": 10.0, "seed": 3,
             "anomaly_at_s": 0.3, "anomaly_magnitude": 50.0,
             "anomaly_duration_s": 0.5},
        ])
        operator = harness.auth_headers(client, "op-kim", "opera-pass-1")

        def done_mission():
            missions = client.get("/api/missions", headers=operator).json()["missions"]
            mine = [m for m in missions
                    if m["cause"]["device_id"] == "sim-temp-hot"
                    and m["status"] == "done"]
            return mine or None

        missions = wait_until(done_mission, timeout=20)
        assert missions[0]["goal"] == [0.5, 0.5, 0.5]

    def test_fleet_reconnects_after_gateway_restart(self, client, run_fleet):
        # connect a fleet to its own short-lived gateway, kill the gateway,
        # bring up a new one on the same ports, and expect re-registration
        from conftest import GatewayHarness, make_config

        first = GatewayHarness(make_config()).start()
        ports = (first.gateway.device_port, first.gateway.http_port,
                 first.gateway.frame_port)
        fleet = fleet_from_dict({
            "gateway": {"host": "127.0.0.1", "device_port": ports[0],
                        "frame_port": ports[2]},
            "devices": [{"kind": "sensor", "id": "sim-flappy",
                         "channel": "temperature", "rate_hz": 10.0}],
        })
        runner = FleetRunner(fleet)
        try:
            dev = fleet.devices[0]
            wait_until(lambda: dev.sessions == 1)
            first.stop()
            second = GatewayHarness(make_config(
                device_port=ports[0], http_port=ports[1], frame_port=ports[2],
            )).start()
            try:
                wait_until(lambda: dev.sessions >= 2, timeout=15)
                with second.client() as c2:
                    viewer = second.auth_headers(c2, "view-ann", "viewe-pass-1")
                    detail = c2.get("/api/devices/sim-flappy", headers=viewer).json()
                    assert detail["state"] == "connected"
            finally:
                second.stop()
        finally:
            runner.stop()
