"""Topic fan-out for telemetry events with bounded per-subscriber backlogs.

Publishing never blocks a producer. A subscriber that falls a full
backlog behind is cut loose (it receives one CLOSE sentinel and no
further events) so one stalled WebSocket cannot hold back live
teleoperation traffic for everyone else.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass

TOPICS = ("reading", "robot_state", "command", "alert", "mission", "device")

CLOSE = object()  # queue sentinel: subscriber overflowed, hang up


@dataclass(eq=False)
class Subscription:
    queue: asyncio.Queue
    topics: frozenset[str] | None  # None subscribes to everything
    overflowed: bool = False

    def wants(self, topic: str) -> bool:
        return self.topics is None or topic in self.topics


class Hub:
    def __init__(self, backlog: int = 256):
        if backlog < 1:
            raise ValueError("backlog must be >= 1")
        self._backlog = backlog
        self._subs: set[Subscription] = set()

    def subscribe(self, topics=None) -> Subscription:
        selected = None
        if topics is not None:
            selected = frozenset(topics)
            unknown = selected - set(TOPICS)
            if unknown:
                raise ValueError(f"unknown topics: {sorted(unknown)}")
        sub = Subscription(queue=asyncio.Queue(self._backlog), topics=selected)
        self._subs.add(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        self._subs.discard(sub)

    def publish(
        self,
        topic: str,
        device_id: str | None,
        payload: dict,
        timestamp_ms: int,
    ) -> dict:
        """Deliver one event to every live subscriber of the topic."""
        event = {
            "type": topic,
            "device_id": device_id,
            "payload": payload,
            "timestamp_ms": timestamp_ms,
        }
        for sub in list(self._subs):
            if sub.overflowed or not sub.wants(topic):
                continue
            try:
                sub.queue.put_nowait(event)
            except asyncio.QueueFull:
                sub.overflowed = True
                self._subs.discard(sub)
                try:  # make room so the reader wakes up and sees CLOSE
                    sub.queue.get_nowait()
                except asyncio.QueueEmpty:
                    pass
                sub.queue.put_nowait(CLOSE)
        return event

    @property
    def subscriber_count(self) -> int:
        return len(self._subs)
