"""Datagram frame ingest: chunk reassembly and the echo path.

Chunks accumulate per (camera uuid, frame_seq); a frame is released the
moment its last chunk arrives. Partial frames older than the reassembly
timeout are garbage-collected — with a lost chunk the frame is simply
never served, which is the right failure mode for live video. Datagrams
carrying the echo flag bounce straight back to the sender for
round-trip latency measurement and never touch the frame path.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field

from ..protocol import FLAG_ECHO, FrameDecodeError, FramePacket, decode_frame_packet


@dataclass
class _Partial:
    chunk_count: int
    timestamp_ms: int
    parts: dict[int, bytes] = field(default_factory=dict)
    first_seen_ms: int = 0


class FrameReassembler:
    def __init__(self, timeout_ms: int = 500):
        if timeout_ms < 1:
            raise ValueError("timeout_ms must be >= 1")
        self.timeout_ms = timeout_ms
        self._partials: dict[tuple[bytes, int], _Partial] = {}
        self.expired = 0
        self.mismatched = 0

    def add(self, pkt: FramePacket, now_ms: int) -> bytes | None:
        """Absorb one chunk; returns the full frame bytes when complete.

        Duplicate chunks are idempotent; a chunk disagreeing with the
        frame's declared chunk_count is dropped as corrupt.
        """
        key = (pkt.device_uuid, pkt.frame_seq)
        partial = self._partials.get(key)
        if partial is None:
            partial = _Partial(
                chunk_count=pkt.chunk_count,
                timestamp_ms=pkt.timestamp_ms,
                first_seen_ms=now_ms,
            )
            self._partials[key] = partial
        elif partial.chunk_count != pkt.chunk_count:
            self.mismatched += 1
            return None
        partial.parts.setdefault(pkt.chunk_index, pkt.payload)
        if len(partial.parts) < partial.chunk_count:
            return None
        del self._partials[key]
        return b"".join(partial.parts[i] for i in range(partial.chunk_count))

    def gc(self, now_ms: int) -> int:
        """Drop partial frames that outlived the reassembly window."""
        dead = [
            key
            for key, partial in self._partials.items()
            if now_ms - partial.first_seen_ms > self.timeout_ms
        ]
        for key in dead:
            del self._partials[key]
        self.expired += len(dead)
        return len(dead)

    @property
    def open_partials(self) -> int:
        return len(self._partials)


class FrameIngestProtocol(asyncio.DatagramProtocol):
    """UDP endpoint: echoes probe datagrams, feeds the rest to the service."""

    def __init__(self, service):
        self.service = service
        self.transport: asyncio.DatagramTransport | None = None
        self.bad_datagrams = 0

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        try:
            pkt = decode_frame_packet(data)
        except FrameDecodeError:
            self.bad_datagrams += 1
            return
        if pkt.flags & FLAG_ECHO:
            self.transport.sendto(data, addr)
            return
        self.service.ingest_frame_packet(pkt)

    def error_received(self, exc) -> None:
        self.bad_datagrams += 1
