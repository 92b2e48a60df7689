"""Connected-device registry: identity, liveness, exclusive robot control.

All operations take an internal lock and are linearizable; connection
handlers on any thread (or event-loop task) may call them concurrently.
A robot has at most one controller session at any instant, and losing
liveness releases the lock so a dead session can never fence out care staff.
"""

from __future__ import annotations

import threading
import uuid as uuidlib
from dataclasses import dataclass, replace

from .control import ControlParams
from .protocol import DEVICE_KINDS, valid_device_id

HEARTBEAT_INTERVAL_S = 1.0
STALE_TIMEOUT_S = 5.0


class RegistryError(Exception):
    """Base for registry failures."""


class UnknownDeviceError(RegistryError):
    pass


class DuplicateDeviceError(RegistryError):
    """A live connection already owns this device id."""


class NotARobotError(RegistryError):
    pass


class DeviceOfflineError(RegistryError):
    pass


class ControlBusyError(RegistryError):
    """Another session holds the robot."""


class NotHolderError(RegistryError):
    pass


@dataclass
class DeviceRecord:
    id: str
    uuid: bytes
    kind: str
    dof: int
    state: str  # "connected" | "disconnected"
    last_seen_ms: int
    controller: str | None = None  # session id, robots only
    config: ControlParams | None = None  # robots only

    @property
    def connected(self) -> bool:
        return self.state == "connected"


@dataclass
class _Entry:
    record: DeviceRecord
    generation: int = 0  # bumped per (re)registration


class DeviceRegistry:
    def __init__(self):
        self._lock = threading.RLock()
        self._by_id: dict[str, _Entry] = {}
        self._by_uuid: dict[bytes, str] = {}

    def register(
        self,
        device_id: str,
        kind: str,
        dof: int = 0,
        config: ControlParams | None = None,
        *,
        now_ms: int,
    ) -> DeviceRecord:
        """Create or reactivate a device record; uuid is stable across reconnects."""
        if not valid_device_id(device_id):
            raise RegistryError(f"invalid device id {device_id!r}")
        if kind not in DEVICE_KINDS:
            raise RegistryError(f"unknown device kind {kind!r}")
        if kind == "robot":
            if dof < 1:
                raise RegistryError("robots must declare dof >= 1")
            if config is None:
                raise RegistryError("robots must carry control params")
            config.validate(dof)
        elif dof:
            raise RegistryError(f"{kind} devices have dof 0")
        with self._lock:
            entry = self._by_id.get(device_id)
            if entry is not None:
                if entry.record.connected:
                    raise DuplicateDeviceError(
                        f"device {device_id!r} already connected"
                    )
                entry.record.kind = kind
                entry.record.dof = dof
                entry.record.state = "connected"
                entry.record.last_seen_ms = now_ms
                entry.record.controller = None
                entry.record.config = config
                entry.generation += 1
                return self._snapshot(entry.record)
            device_uuid = uuidlib.uuid4().bytes
            record = DeviceRecord(
                id=device_id,
                uuid=device_uuid,
                kind=kind,
                dof=dof,
                state="connected",
                last_seen_ms=now_ms,
                config=config,
            )
            self._by_id[device_id] = _Entry(record=record, generation=1)
            self._by_uuid[device_uuid] = device_id
            return self._snapshot(record)

    def lookup(self, device_id: str) -> DeviceRecord:
        with self._lock:
            entry = self._by_id.get(device_id)
            if entry is None:
                raise UnknownDeviceError(f"unknown device {device_id!r}")
            return self._snapshot(entry.record)

    def lookup_by_uuid(self, device_uuid: bytes) -> DeviceRecord | None:
        with self._lock:
            device_id = self._by_uuid.get(device_uuid)
            if device_id is None:
                return None
            return self._snapshot(self._by_id[device_id].record)

    def list_devices(self) -> list[DeviceRecord]:
        with self._lock:
            return [self._snapshot(e.record) for e in self._by_id.values()]

    def touch(self, device_id: str, now_ms: int) -> None:
        with self._lock:
            entry = self._by_id.get(device_id)
            if entry is not None and entry.record.connected:
                entry.record.last_seen_ms = max(entry.record.last_seen_ms, now_ms)

    def update_config(self, device_id: str, config: ControlParams) -> DeviceRecord:
        with self._lock:
            entry = self._require(device_id)
            if entry.record.kind != "robot":
                raise NotARobotError(f"{device_id!r} is not a robot")
            config.validate(entry.record.dof)
            entry.record.config = config
            return self._snapshot(entry.record)

    def acquire_control(self, session: str, device_id: str) -> DeviceRecord:
        """Grant exclusive control; idempotent for the current holder."""
        with self._lock:
            entry = self._require(device_id)
            record = entry.record
            if record.kind != "robot":
                raise NotARobotError(f"{device_id!r} is not a robot")
            if not record.connected:
                raise DeviceOfflineError(f"{device_id!r} is disconnected")
            if record.controller is not None and record.controller != session:
                raise ControlBusyError(f"{device_id!r} held by another session")
            record.controller = session
            return self._snapshot(record)

    def release_control(
        self, session: str, device_id: str, *, force: bool = False
    ) -> None:
        with self._lock:
            entry = self._require(device_id)
            record = entry.record
            if record.controller is None:
                if force:
                    return
                raise NotHolderError(f"{device_id!r} is not held")
            if record.controller != session and not force:
                raise NotHolderError(f"{device_id!r} held by a different session")
            record.controller = None

    def release_all(self, session: str) -> list[str]:
        """Drop every robot held by a session (logout/disconnect path)."""
        released = []
        with self._lock:
            for entry in self._by_id.values():
                if entry.record.controller == session:
                    entry.record.controller = None
                    released.append(entry.record.id)
        return released

    def controller_of(self, device_id: str) -> str | None:
        with self._lock:
            return self._require(device_id).record.controller

    def mark_disconnected(self, device_id: str) -> DeviceRecord | None:
        with self._lock:
            entry = self._by_id.get(device_id)
            if entry is None or not entry.record.connected:
                return None
            entry.record.state = "disconnected"
            entry.record.controller = None
            return self._snapshot(entry.record)

    def sweep_stale(self, now_ms: int, timeout_ms: int) -> list[DeviceRecord]:
        """Disconnect devices silent for longer than the timeout."""
        if timeout_ms <= 0:
            raise ValueError("timeout must be > 0")
        expired = []
        with self._lock:
            for entry in self._by_id.values():
                record = entry.record
                if record.connected and now_ms - record.last_seen_ms > timeout_ms:
                    record.state = "disconnected"
                    record.controller = None
                    expired.append(self._snapshot(record))
        return expired

    def _require(self, device_id: str) -> _Entry:
        entry = self._by_id.get(device_id)
        if entry is None:
            raise UnknownDeviceError(f"unknown device {device_id!r}")
        return entry

    @staticmethod
    def _snapshot(record: DeviceRecord) -> DeviceRecord:
        return replace(record)
