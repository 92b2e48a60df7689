"""Per-connection state machine for the device stream port.

Life of a link: the first envelope must be a valid ``hello`` within the
hello timeout, the gateway answers ``hello_ack`` (carrying the device's
stable uuid), and from then on envelopes are dispatched until EOF or a
protocol violation. Violations — malformed framing, sequence regression,
an envelope claiming a foreign device id — earn a best-effort ``error``
envelope and a closed connection; the registry marks the device
disconnected either way.
"""

from __future__ import annotations

import asyncio
import logging
from collections import deque

from ..protocol import Envelope, EnvelopeDecoder, ProtocolError, encode_envelope

log = logging.getLogger(__name__)

_READ_CHUNK = 65536


class LinkRejected(Exception):
    """Registration refused (duplicate live id, malformed hello, ...)."""


class DeviceSession:
    def __init__(self, service, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.service = service
        self.reader = reader
        self.writer = writer
        self.device_id: str | None = None
        self.device_uuid: bytes | None = None
        self._decoder = EnvelopeDecoder()
        self._inbox: deque[Envelope] = deque()
        self._out_seq = 0
        self._last_in_seq: int | None = None
        self._closed = False

    # Outbound

    async def send(self, msg_type: str, payload: dict) -> None:
        if self._closed:
            return
        self._out_seq += 1
        env = Envelope(
            msg_type=msg_type,
            seq=self._out_seq,
            timestamp_ms=self.service.now_ms(),
            device_id=self.device_id,
            payload=payload,
        )
        self.writer.write(encode_envelope(env))
        try:
            await self.writer.drain()
        except (ConnectionError, RuntimeError):
            self.close()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.writer.close()
        except RuntimeError:
            pass

    @property
    def closed(self) -> bool:
        return self._closed

    # Inbound

    async def _next_envelope(self) -> Envelope | None:
        """One decoded envelope, or None at EOF. Raises on malformed bytes."""
        while not self._inbox:
            data = await self.reader.read(_READ_CHUNK)
            if not data:
                return None
            self._inbox.extend(self._decoder.feed(data))
        return self._inbox.popleft()

    async def _bail(self, reason: str) -> None:
        log.warning("device link %s: %s", self.device_id or "<unregistered>", reason)
        try:
            await self.send("error", {"reason": reason})
        except Exception:
            pass
        self.close()

    async def run(self) -> None:
        try:
            await self._handshake_and_serve()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self.close()
            self.service.unlink(self)

    async def _handshake_and_serve(self) -> None:
        try:
            first = await asyncio.wait_for(
                self._next_envelope(), timeout=self.service.config.hello_timeout_s
            )
        except asyncio.TimeoutError:
            await self._bail("no hello within the handshake window")
            return
        except ProtocolError as exc:
            await self._bail(f"protocol error: {exc}")
            return
        if first is None:
            return
        if first.msg_type != "hello":
            await self._bail(f"first message must be hello, got {first.msg_type}")
            return
        self._last_in_seq = first.seq
        try:
            ack = self.service.register_device(self, first)
        except LinkRejected as exc:
            await self._bail(str(exc))
            return
        await self.send("hello_ack", ack)
        await self.service.after_register(self)
        await self._serve()

    async def _serve(self) -> None:
        while not self._closed:
            try:
                env = await self._next_envelope()
            except ProtocolError as exc:
                await self._bail(f"protocol error: {exc}")
                return
            if env is None:
                return
            if env.seq <= self._last_in_seq:
                await self._bail(
                    f"sequence must increase ({env.seq} after {self._last_in_seq})"
                )
                return
            if env.device_id != self.device_id:
                await self._bail(
                    f"envelope device_id {env.device_id!r} does not match link"
                )
                return
            self._last_in_seq = env.seq
            try:
                await self.service.dispatch_envelope(self, env)
            except LinkRejected as exc:
                await self._bail(str(exc))
                return
