"""Telemetry persistence: reading time series, latest-frame rings, session logs.

Readings and session logs are durable: each record is framed as a 4-byte
big-endian length plus a UTF-8 JSON body in an append-only file, flushed
before the append is acknowledged. Reopening after a crash replays every
complete record and truncates a torn tail. Video frames are ephemeral by
design: a bounded per-camera ring holding only fully reassembled frames.
"""

from __future__ import annotations

import bisect
import json
import os
import struct
import threading
from dataclasses import dataclass, asdict, field
from pathlib import Path

FRAME_RING_CAPACITY = 32
# A frame_seq that drops by more than this is a restarted stream, not reordering.
SEQ_RESTART_DELTA = 1 << 31

_LEN = struct.Struct(">I")


class StoreError(Exception):
    """Durable append failed; the caller must not acknowledge the write."""


class RecordLog:
    """Append-only log of JSON records with crash-tolerant reopen.

    Opening scans existing records and truncates any torn tail so later
    appends continue a clean stream.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._records = self._recover()
        self._fh = open(self.path, "ab")
        self._lock = threading.Lock()

    def _recover(self) -> list[dict]:
        records: list[dict] = []
        if not self.path.exists():
            return records
        good_end = 0
        with open(self.path, "rb") as fh:
            data = fh.read()
        offset = 0
        while offset + _LEN.size <= len(data):
            (length,) = _LEN.unpack_from(data, offset)
            end = offset + _LEN.size + length
            if end > len(data):
                break
            try:
                records.append(json.loads(data[offset + _LEN.size:end]))
            except ValueError:
                break
            offset = end
            good_end = end
        if good_end < len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)
        return records

    def append(self, record: dict) -> None:
        body = json.dumps(record, separators=(",", ":")).encode("utf-8")
        with self._lock:
            try:
                self._fh.write(_LEN.pack(len(body)) + body)
                self._fh.flush()
            except OSError as exc:
                raise StoreError(f"append to {self.path} failed: {exc}") from exc
            self._records.append(record)

    def records(self) -> list[dict]:
        with self._lock:
            return list(self._records)

    def sync(self) -> None:
        with self._lock:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            self._fh.flush()
            self._fh.close()


@dataclass(frozen=True)
class ReadingRecord:
    device_id: str
    channel: str
    value: float
    unit: str
    timestamp_ms: int


@dataclass(frozen=True)
class FrameRecord:
    device_id: str
    frame_seq: int
    timestamp_ms: int
    image: bytes


@dataclass(frozen=True)
class SessionLogEntry:
    """One accepted operator command and its outcome, replayable exactly."""

    session_id: str
    user: str
    device_id: str
    v_h: tuple[float, ...]
    dt: float
    gamma: float
    m: float
    v_r: tuple[float, ...]
    prev_pose: tuple[float, ...]
    pose: tuple[float, ...]
    timestamp_ms: int


@dataclass
class _FrameRing:
    capacity: int
    frames: list[FrameRecord] = field(default_factory=list)
    max_seq: int = -1
    stale_drops: int = 0


class TelemetryStore:
    """Facade over the three record categories.

    ``root`` of None keeps everything in memory (tests, benches); a path
    makes readings and session logs durable there.
    """

    def __init__(
        self,
        root: str | Path | None = None,
        frame_ring_capacity: int = FRAME_RING_CAPACITY,
    ):
        self.root = Path(root) if root is not None else None
        self._lock = threading.Lock()
        self._readings: dict[tuple[str, str], list[ReadingRecord]] = {}
        self._reading_keys: dict[tuple[str, str], list[int]] = {}
        self._rings: dict[str, _FrameRing] = {}
        self._ring_capacity = frame_ring_capacity
        self._sessions: dict[str, list[SessionLogEntry]] = {}
        self._reading_log: RecordLog | None = None
        self._session_log: RecordLog | None = None
        if self.root is not None:
            self._reading_log = RecordLog(self.root / "readings.log")
            self._session_log = RecordLog(self.root / "sessions.log")
            for rec in self._reading_log.records():
                self._index_reading(ReadingRecord(**rec))
            for rec in self._session_log.records():
                rec = dict(rec)
                for key in ("v_h", "v_r", "prev_pose", "pose"):
                    rec[key] = tuple(rec[key])
                self._index_session(SessionLogEntry(**rec))

    # Readings

    def append_reading(self, reading: ReadingRecord) -> None:
        """Durably store one reading; raises StoreError rather than dropping."""
        if not reading.channel:
            raise ValueError("reading channel must be non-empty")
        if self._reading_log is not None:
            self._reading_log.append(asdict(reading))
        with self._lock:
            self._index_reading(reading)

    def _index_reading(self, reading: ReadingRecord) -> None:
        key = (reading.device_id, reading.channel)
        series = self._readings.setdefault(key, [])
        stamps = self._reading_keys.setdefault(key, [])
        # Keep each series sorted by timestamp; out-of-order arrivals are rare.
        pos = bisect.bisect_right(stamps, reading.timestamp_ms)
        stamps.insert(pos, reading.timestamp_ms)
        series.insert(pos, reading)

    def query_readings(
        self,
        device_id: str,
        channel: str,
        from_ms: int,
        to_ms: int,
        limit: int,
    ) -> list[ReadingRecord]:
        """Newest ``limit`` readings in [from_ms, to_ms], in time order."""
        if from_ms > to_ms:
            raise ValueError("from_ms must be <= to_ms")
        if limit < 1:
            raise ValueError("limit must be >= 1")
        with self._lock:
            key = (device_id, channel)
            series = self._readings.get(key)
            if not series:
                return []
            stamps = self._reading_keys[key]
            lo = bisect.bisect_left(stamps, from_ms)
            hi = bisect.bisect_right(stamps, to_ms)
            window = series[lo:hi]
        if len(window) > limit:
            window = window[len(window) - limit:]
        return window

    def channels(self, device_id: str) -> list[str]:
        with self._lock:
            return sorted({ch for dev, ch in self._readings if dev == device_id})

    # Frames

    def put_frame(self, frame: FrameRecord) -> bool:
        """Admit a fully reassembled frame; stale seqs are dropped, not errors.

        Returns True if the frame was retained.
        """
        if not frame.image:
            raise ValueError("frame image must be non-empty")
        with self._lock:
            ring = self._rings.setdefault(
                frame.device_id, _FrameRing(capacity=self._ring_capacity)
            )
            if frame.frame_seq <= ring.max_seq:
                if ring.max_seq - frame.frame_seq > SEQ_RESTART_DELTA:
                    ring.frames.clear()
                    ring.max_seq = -1
                else:
                    ring.stale_drops += 1
                    return False
            ring.frames.append(frame)
            ring.max_seq = frame.frame_seq
            if len(ring.frames) > ring.capacity:
                del ring.frames[: len(ring.frames) - ring.capacity]
            return True

    def latest_frame(self, device_id: str) -> FrameRecord | None:
        with self._lock:
            ring = self._rings.get(device_id)
            if ring is None or not ring.frames:
                return None
            return ring.frames[-1]

    def frame_stats(self, device_id: str) -> dict:
        with self._lock:
            ring = self._rings.get(device_id)
            if ring is None:
                return {"retained": 0, "max_seq": -1, "stale_drops": 0}
            return {
                "retained": len(ring.frames),
                "max_seq": ring.max_seq,
                "stale_drops": ring.stale_drops,
            }

    # Session logs

    def log_command(self, entry: SessionLogEntry) -> None:
        if self._session_log is not None:
            self._session_log.append(asdict(entry))
        with self._lock:
            self._index_session(entry)

    def _index_session(self, entry: SessionLogEntry) -> None:
        self._sessions.setdefault(entry.session_id, []).append(entry)

    def export_session(self, session_id: str) -> list[SessionLogEntry]:
        """Every entry of a session in append order; empty if unknown."""
        with self._lock:
            return list(self._sessions.get(session_id, []))

    def session_ids(self) -> list[str]:
        with self._lock:
            return list(self._sessions)

    # Lifecycle

    def flush(self) -> None:
        if self._reading_log is not None:
            self._reading_log.sync()
        if self._session_log is not None:
            self._session_log.sync()

    def close(self) -> None:
        if self._reading_log is not None:
            self._reading_log.close()
        if self._session_log is not None:
            self._session_log.close()
