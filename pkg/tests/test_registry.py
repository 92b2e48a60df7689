from concurrent.futures import ThreadPoolExecutor

import pytest

from iohrt.control import default_params
from iohrt.registry import (
    ControlBusyError,
    DeviceOfflineError,
    DeviceRegistry,
    DuplicateDeviceError,
    NotARobotError,
    NotHolderError,
    RegistryError,
    UnknownDeviceError,
)


@pytest.fixture
def reg():
    return DeviceRegistry()


def add_robot(reg, device_id="robot-7dof", dof=7, now_ms=0):
    return reg.register(device_id, "robot", dof, default_params(dof), now_ms=now_ms)


def test_register_sensor_has_zero_dof(reg):
    rec = reg.register("temp-kitchen", "sensor", now_ms=10)
    assert rec.kind == "sensor"
    assert rec.dof == 0
    assert rec.connected
    assert reg.lookup("temp-kitchen").uuid == rec.uuid


def test_duplicate_live_id_rejected(reg):
    add_robot(reg)
    with pytest.raises(DuplicateDeviceError):
        add_robot(reg)


def test_reregister_after_disconnect_keeps_uuid(reg):
    first = add_robot(reg)
    reg.mark_disconnected("robot-7dof")
    again = add_robot(reg, now_ms=99)
    assert again.uuid == first.uuid
    assert again.connected


def test_robot_requires_config(reg):
    with pytest.raises(RegistryError):
        reg.register("bad-bot", "robot", 3, None, now_ms=0)


def test_sensor_with_dof_rejected(reg):
    with pytest.raises(RegistryError):
        reg.register("odd", "sensor", 2, now_ms=0)


class TestControlOwnership:
    def test_free_robot_grants(self, reg):
        add_robot(reg)
        rec = reg.acquire_control("sess-a", "robot-7dof")
        assert rec.controller == "sess-a"

    def test_held_robot_is_busy_for_others(self, reg):
        add_robot(reg)
        reg.acquire_control("sess-a", "robot-7dof")
        with pytest.raises(ControlBusyError):
            reg.acquire_control("sess-b", "robot-7dof")

    def test_holder_reacquire_is_idempotent(self, reg):
        add_robot(reg)
        reg.acquire_control("sess-a", "robot-7dof")
        rec = reg.acquire_control("sess-a", "robot-7dof")
        assert rec.controller == "sess-a"

    def test_sensor_cannot_be_acquired(self, reg):
        reg.register("temp-1", "sensor", now_ms=0)
        with pytest.raises(NotARobotError):
            reg.acquire_control("s", "temp-1")

    def test_offline_robot_cannot_be_acquired(self, reg):
        add_robot(reg)
        reg.mark_disconnected("robot-7dof")
        with pytest.raises(DeviceOfflineError):
            reg.acquire_control("s", "robot-7dof")

    def test_unknown_device(self, reg):
        with pytest.raises(UnknownDeviceError):
            reg.acquire_control("s", "ghost")

    def test_holder_release(self, reg):
        add_robot(reg)
        reg.acquire_control("sess-a", "robot-7dof")
        reg.release_control("sess-a", "robot-7dof")
        assert reg.controller_of("robot-7dof") is None

    def test_non_holder_release_rejected(self, reg):
        add_robot(reg)
        reg.acquire_control("sess-a", "robot-7dof")
        with pytest.raises(NotHolderError):
            reg.release_control("sess-b", "robot-7dof")

    def test_force_release_by_admin_session(self, reg):
        add_robot(reg)
        reg.acquire_control("sess-a", "robot-7dof")
        reg.release_control("sess-admin", "robot-7dof", force=True)
        assert reg.controller_of("robot-7dof") is None

    def test_disconnect_auto_releases(self, reg):
        add_robot(reg)
        reg.acquire_control("sess-a", "robot-7dof")
        reg.mark_disconnected("robot-7dof")
        rec = reg.lookup("robot-7dof")
        assert rec.controller is None
        assert not rec.connected

    def test_release_all_for_session(self, reg):
        add_robot(reg, "r1")
        add_robot(reg, "r2")
        reg.acquire_control("sess-a", "r1")
        reg.acquire_control("sess-a", "r2")
        assert sorted(reg.release_all("sess-a")) == ["r1", "r2"]

    def test_concurrent_acquire_storm_grants_exactly_one(self, reg):
        add_robot(reg)
        sessions = [f"sess-{i}" for i in range(64)]

        def attempt(session):
            try:
                reg.acquire_control(session, "robot-7dof")
                return session
            except ControlBusyError:
                return None

        for _ in range(20):
            with ThreadPoolExecutor(max_workers=16) as pool:
                winners = [s for s in pool.map(attempt, sessions) if s]
            assert len(winners) == 1
            assert reg.controller_of("robot-7dof") == winners[0]
            reg.release_control(winners[0], "robot-7dof")


class TestLiveness:
    def test_stale_device_swept(self, reg):
        add_robot(reg, now_ms=0)
        reg.acquire_control("sess-a", "robot-7dof")
        expired = reg.sweep_stale(now_ms=10_000, timeout_ms=5_000)
        assert [r.id for r in expired] == ["robot-7dof"]
        rec = reg.lookup("robot-7dof")
        assert not rec.connected
        assert rec.controller is None

    def test_fresh_heartbeat_survives_sweep(self, reg):
        add_robot(reg, now_ms=0)
        reg.touch("robot-7dof", 9_000)
        assert reg.sweep_stale(now_ms=10_000, timeout_ms=5_000) == []
        assert reg.lookup("robot-7dof").connected

    def test_second_sweep_is_empty(self, reg):
        add_robot(reg, now_ms=0)
        assert len(reg.sweep_stale(10_000, 5_000)) == 1
        assert reg.sweep_stale(20_000, 5_000) == []

    def test_touch_never_moves_backwards(self, reg):
        add_robot(reg, now_ms=100)
        reg.touch("robot-7dof", 50)
        assert reg.lookup("robot-7dof").last_seen_ms == 100


def test_lookup_by_uuid(reg):
    rec = add_robot(reg)
    assert reg.lookup_by_uuid(rec.uuid).id == "robot-7dof"
    assert reg.lookup_by_uuid(b"\x00" * 16) is None


def test_snapshots_are_isolated(reg):
    rec = add_robot(reg)
    rec.state = "disconnected"
    assert reg.lookup("robot-7dof").connected
