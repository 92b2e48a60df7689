"""Anomaly monitoring: readings against rules, inspection-mission lifecycle.

A reading outside its rule's inclusive [min, max] band raises an alert
every time, but at most one live (not yet done) mission exists per rule
at any moment, so a sensor stuck out of range cannot flood the fleet
with duplicate dispatches. Mission status only moves forward:
pending -> dispatched -> acknowledged -> done.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from ..config import AnomalyRuleConfig
from ..store import ReadingRecord

STATUS_ORDER = ("pending", "dispatched", "acknowledged", "done")


class MissionError(Exception):
    pass


class UnknownMissionError(MissionError):
    pass


class BadTransitionError(MissionError):
    pass


def _rule_key(rule: AnomalyRuleConfig) -> tuple:
    return (rule.channel, rule.device_id, rule.target_robot, rule.min, rule.max)


@dataclass
class Mission:
    id: str
    kind: str  # only "inspection" today
    target_robot: str
    goal: tuple[float, ...]
    cause: dict  # triggering reading + violated bounds
    status: str
    created_ms: int
    updated_ms: int
    rule_key: tuple = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "target_robot": self.target_robot,
            "goal": list(self.goal),
            "cause": dict(self.cause),
            "status": self.status,
            "created_ms": self.created_ms,
            "updated_ms": self.updated_ms,
        }


class MissionBoard:
    def __init__(
        self,
        rules: list[AnomalyRuleConfig] | None = None,
        done_tolerance: float = 1e-3,
    ):
        self._lock = threading.Lock()
        self._rules: list[AnomalyRuleConfig] = list(rules or [])
        self._tolerance = done_tolerance
        self._missions: dict[str, Mission] = {}
        self._ids = itertools.count(1)

    # Rules

    def rules(self) -> list[AnomalyRuleConfig]:
        with self._lock:
            return list(self._rules)

    def set_rules(self, rules: list[AnomalyRuleConfig]) -> None:
        for rule in rules:
            rule.validate()
        with self._lock:
            self._rules = list(rules)

    # Evaluation

    def evaluate(
        self, reading: ReadingRecord, now_ms: int
    ) -> tuple[dict | None, Mission | None]:
        """Check one reading; returns (alert payload, new mission) or Nones.

        An alert fires for every out-of-range reading; a mission only
        when no live mission already exists for the violated rule.
        """
        with self._lock:
            for rule in self._rules:
                if rule.channel != reading.channel:
                    continue
                if rule.device_id != "*" and rule.device_id != reading.device_id:
                    continue
                if rule.min <= reading.value <= rule.max:
                    continue
                alert = {
                    "channel": reading.channel,
                    "device_id": reading.device_id,
                    "value": reading.value,
                    "unit": reading.unit,
                    "min": rule.min,
                    "max": rule.max,
                    "timestamp_ms": reading.timestamp_ms,
                    "mission_id": None,
                }
                key = _rule_key(rule)
                if any(
                    m.rule_key == key and m.status != "done"
                    for m in self._missions.values()
                ):
                    return alert, None
                mission = Mission(
                    id=f"m-{next(self._ids):04d}",
                    kind="inspection",
                    target_robot=rule.target_robot,
                    goal=rule.goal,
                    cause=alert,
                    status="pending",
                    created_ms=now_ms,
                    updated_ms=now_ms,
                    rule_key=key,
                )
                self._missions[mission.id] = mission
                alert = dict(alert, mission_id=mission.id)
                return alert, mission
        return None, None

    # Transitions

    def _advance(self, mission: Mission, status: str, now_ms: int) -> Mission:
        if STATUS_ORDER.index(status) <= STATUS_ORDER.index(mission.status):
            raise BadTransitionError(
                f"mission {mission.id} is {mission.status}; cannot move to {status}"
            )
        mission.status = status
        mission.updated_ms = now_ms
        return mission

    def mark_dispatched(self, mission_id: str, now_ms: int) -> Mission:
        with self._lock:
            return self._advance(self._require(mission_id), "dispatched", now_ms)

    def ack(self, mission_id: str, now_ms: int) -> Mission:
        with self._lock:
            return self._advance(self._require(mission_id), "acknowledged", now_ms)

    def observe_pose(
        self, robot_id: str, pose: tuple[float, ...], now_ms: int
    ) -> list[Mission]:
        """Complete dispatched/acknowledged missions whose goal is reached."""
        done = []
        with self._lock:
            for mission in self._missions.values():
                if mission.target_robot != robot_id:
                    continue
                if mission.status not in ("dispatched", "acknowledged"):
                    continue
                if len(pose) != len(mission.goal):
                    continue
                error = max(abs(p - g) for p, g in zip(pose, mission.goal))
                if error <= self._tolerance:
                    done.append(self._advance(mission, "done", now_ms))
        return done

    # Queries

    def pending_for(self, robot_id: str) -> list[Mission]:
        with self._lock:
            return [
                m
                for m in self._missions.values()
                if m.target_robot == robot_id and m.status == "pending"
            ]

    def get(self, mission_id: str) -> Mission:
        with self._lock:
            return self._require(mission_id)

    def list_missions(self) -> list[Mission]:
        with self._lock:
            return sorted(self._missions.values(), key=lambda m: m.id)

    def _require(self, mission_id: str) -> Mission:
        mission = self._missions.get(mission_id)
        if mission is None:
            raise UnknownMissionError(f"unknown mission {mission_id!r}")
        return mission
