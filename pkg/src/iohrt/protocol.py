"""Wire formats for the gateway's two device-facing links.

Control messages travel over the stream link as length-prefixed JSON:

    [u32 BE body length][UTF-8 JSON body]

Video frames travel over the datagram link as fixed-header binary chunks:

    [4s magic "IHRT"][u8 version][u8 flags][16s device uuid]
    [u32 frame_seq][u16 chunk_index][u16 chunk_count]
    [u64 timestamp_ms][u16 payload_len][payload]

All multi-byte integers are big-endian. Both decoders are total: arbitrary
input yields either a decoded value, a "need more bytes" signal, or a typed
error -- never an uncontrolled exception.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

# Stream framing
LENGTH_PREFIX = struct.Struct(">I")
MAX_ENVELOPE_BODY = 1 * 1024 * 1024  # 1 MiB cap on the JSON body

PROTOCOL_VERSION = 1

MSG_TYPES = frozenset({
    "hello",
    "hello_ack",
    "reading",
    "robot_state",
    "command",
    "actuator_set",
    "mission_assign",
    "heartbeat",
    "error",
    "latency_probe",
    "latency_echo",
})

# Datagram framing
FRAME_MAGIC = b"IHRT"
FRAME_HEADER = struct.Struct(">4sBB16sIHHQH")
FRAME_HEADER_SIZE = FRAME_HEADER.size  # 40 bytes
MAX_CHUNK_PAYLOAD = 60_000
MAX_DATAGRAM = FRAME_HEADER_SIZE + MAX_CHUNK_PAYLOAD

# flags bit 0: echo request (latency probe over the datagram path).
# Remaining bits reserved, must be zero.
FLAG_ECHO = 0x01

DEVICE_KINDS = ("robot", "sensor", "actuator", "camera")

_U16 = 1 << 16
_U32 = 1 << 32
_U64 = 1 << 64

_ID_ALPHABET = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-"
)


class ProtocolError(Exception):
    """Malformed or oversize stream message; the connection should be closed."""


class FrameDecodeError(Exception):
    """A datagram that cannot be a frame chunk; drop and count, never fatal."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def valid_device_id(value: str) -> bool:
    """Device ids are 1-64 chars of [A-Za-z0-9_-]."""
    return (
        isinstance(value, str)
        and 0 < len(value) <= 64
        and all(c in _ID_ALPHABET for c in value)
    )


@dataclass(frozen=True)
class Envelope:
    """One stream-link control message.

    ``seq`` must increase strictly per connection (enforced by the link
    layer, not the codec). ``device_id`` is absent on server-originated
    administrative messages.
    """

    msg_type: str
    seq: int
    timestamp_ms: int
    device_id: str | None = None
    payload: dict = field(default_factory=dict)
    version: int = PROTOCOL_VERSION

    def validate(self) -> None:
        if self.version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported version {self.version!r}")
        if self.msg_type not in MSG_TYPES:
            raise ProtocolError(f"unknown msg_type {self.msg_type!r}")
        if not isinstance(self.seq, int) or not 0 <= self.seq < _U64:
            raise ProtocolError(f"seq out of range: {self.seq!r}")
        if not isinstance(self.timestamp_ms, int) or not 0 <= self.timestamp_ms < _U64:
            raise ProtocolError(f"timestamp_ms out of range: {self.timestamp_ms!r}")
        if self.device_id is not None and not valid_device_id(self.device_id):
            raise ProtocolError(f"invalid device_id {self.device_id!r}")
        if not isinstance(self.payload, dict):
            raise ProtocolError("payload must be a JSON object")


def encode_envelope(envelope: Envelope) -> bytes:
    """Serialize to the length-prefixed wire form.

    Raises ProtocolError if the envelope violates its invariants or the
    JSON body exceeds the 1 MiB cap.
    """
    envelope.validate()
    body_obj = {
        "version": envelope.version,
        "msg_type": envelope.msg_type,
        "seq": envelope.seq,
        "timestamp_ms": envelope.timestamp_ms,
        "payload": envelope.payload,
    }
    if envelope.device_id is not None:
        body_obj["device_id"] = envelope.device_id
    try:
        body = json.dumps(
            body_obj, separators=(",", ":"), allow_nan=False
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload not JSON-serializable: {exc}") from exc
    if len(body) > MAX_ENVELOPE_BODY:
        raise ProtocolError(f"envelope body {len(body)} exceeds {MAX_ENVELOPE_BODY}")
    return LENGTH_PREFIX.pack(len(body)) + body


def _reject_constant(name: str):
    raise ValueError(f"non-finite JSON constant {name}")


def decode_envelope(buf: bytes | bytearray | memoryview) -> tuple[Envelope, int] | None:
    """Decode one envelope from the head of ``buf``.

    Returns (envelope, consumed_bytes) on success, None when more bytes are
    needed, and raises ProtocolError for input that can never become valid.
    """
    buf = memoryview(buf)
    if len(buf) < LENGTH_PREFIX.size:
        return None
    (length,) = LENGTH_PREFIX.unpack_from(buf, 0)
    if length > MAX_ENVELOPE_BODY:
        raise ProtocolError(f"length prefix {length} exceeds {MAX_ENVELOPE_BODY}")
    total = LENGTH_PREFIX.size + length
    if len(buf) < total:
        return None
    raw = bytes(buf[LENGTH_PREFIX.size:total])
    try:
        obj = json.loads(raw.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"malformed JSON body: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("envelope body must be a JSON object")
    try:
        envelope = Envelope(
            version=obj.get("version"),
            msg_type=obj.get("msg_type"),
            seq=obj.get("seq"),
            timestamp_ms=obj.get("timestamp_ms"),
            device_id=obj.get("device_id"),
            payload=obj.get("payload", {}),
        )
    except TypeError as exc:  # pragma: no cover - dataclass misuse guard
        raise ProtocolError(str(exc)) from exc
    envelope.validate()
    return envelope, total


class EnvelopeDecoder:
    """Incremental decoder for a stream of length-prefixed envelopes."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Envelope]:
        """Append bytes and return every complete envelope now available."""
        self._buf.extend(data)
        out: list[Envelope] = []
        while True:
            result = decode_envelope(self._buf)
            if result is None:
                return out
            envelope, consumed = result
            del self._buf[:consumed]
            out.append(envelope)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class FramePacket:
    """One datagram-sized chunk of a video frame."""

    device_uuid: bytes
    frame_seq: int
    chunk_index: int
    chunk_count: int
    timestamp_ms: int
    payload: bytes
    flags: int = 0
    version: int = PROTOCOL_VERSION

    def validate(self) -> None:
        if self.version != PROTOCOL_VERSION:
            raise FrameDecodeError("bad_version")
        if not isinstance(self.device_uuid, bytes) or len(self.device_uuid) != 16:
            raise FrameDecodeError("bad_uuid")
        if not 0 <= self.flags < 256:
            raise FrameDecodeError("bad_flags")
        if not 0 <= self.frame_seq < _U32:
            raise FrameDecodeError("bad_frame_seq")
        if not 1 <= self.chunk_count < _U16:
            raise FrameDecodeError("bad_chunk_count")
        if not 0 <= self.chunk_index < self.chunk_count:
            raise FrameDecodeError("bad_chunk_index")
        if not 0 <= self.timestamp_ms < _U64:
            raise FrameDecodeError("bad_timestamp")
        if len(self.payload) > MAX_CHUNK_PAYLOAD:
            raise FrameDecodeError("oversize_payload")


def encode_frame_packet(packet: FramePacket) -> bytes:
    packet.validate()
    return FRAME_HEADER.pack(
        FRAME_MAGIC,
        packet.version,
        packet.flags,
        packet.device_uuid,
        packet.frame_seq,
        packet.chunk_index,
        packet.chunk_count,
        packet.timestamp_ms,
        len(packet.payload),
    ) + packet.payload


def decode_frame_packet(data: bytes) -> FramePacket:
    """Decode one datagram. Raises FrameDecodeError with a drop reason."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise FrameDecodeError("not_bytes")
    data = bytes(data)
    if len(data) < FRAME_HEADER_SIZE:
        raise FrameDecodeError("short_datagram")
    magic, version, flags, uuid, frame_seq, chunk_index, chunk_count, ts, plen = (
        FRAME_HEADER.unpack_from(data, 0)
    )
    if magic != FRAME_MAGIC:
        raise FrameDecodeError("bad_magic")
    if version != PROTOCOL_VERSION:
        raise FrameDecodeError("bad_version")
    if plen != len(data) - FRAME_HEADER_SIZE:
        raise FrameDecodeError("length_mismatch")
    packet = FramePacket(
        device_uuid=uuid,
        frame_seq=frame_seq,
        chunk_index=chunk_index,
        chunk_count=chunk_count,
        timestamp_ms=ts,
        payload=data[FRAME_HEADER_SIZE:],
        flags=flags,
        version=version,
    )
    packet.validate()
    return packet


def chunk_frame(
    frame: bytes,
    max_chunk: int = MAX_CHUNK_PAYLOAD,
    *,
    device_uuid: bytes,
    frame_seq: int,
    timestamp_ms: int,
    flags: int = 0,
) -> list[FramePacket]:
    """Split an encoded frame into datagram-sized packets.

    chunk_count = ceil(len(frame) / max_chunk); payloads concatenated in
    chunk_index order reproduce the frame byte-for-byte.
    """
    if not frame:
        raise ValueError("cannot chunk an empty frame")
    if not 1 <= max_chunk <= MAX_CHUNK_PAYLOAD:
        raise ValueError(f"max_chunk must be in [1, {MAX_CHUNK_PAYLOAD}]")
    chunk_count = (len(frame) + max_chunk - 1) // max_chunk
    if chunk_count >= _U16:
        raise ValueError(f"frame needs {chunk_count} chunks; limit is {_U16 - 1}")
    packets = []
    for index in range(chunk_count):
        payload = frame[index * max_chunk:(index + 1) * max_chunk]
        packets.append(FramePacket(
            device_uuid=device_uuid,
            frame_seq=frame_seq,
            chunk_index=index,
            chunk_count=chunk_count,
            timestamp_ms=timestamp_ms,
            payload=payload,
            flags=flags,
        ))
    return packets


def reassemble_frame(packets: list[FramePacket]) -> bytes:
    """Inverse of chunk_frame for a complete, consistent packet set."""
    if not packets:
        raise ValueError("no packets")
    count = packets[0].chunk_count
    seq = packets[0].frame_seq
    by_index: dict[int, FramePacket] = {}
    for p in packets:
        if p.chunk_count != count or p.frame_seq != seq:
            raise ValueError("packets from different frames")
        by_index[p.chunk_index] = p
    if len(by_index) != count:
        raise ValueError(f"have {len(by_index)} of {count} chunks")
    return b"".join(by_index[i].payload for i in range(count))
