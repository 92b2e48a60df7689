"""Motion-scaled teleoperation and human-robot shared control.

The two integrators step a commanded setpoint from incremental inputs:

    teleop:  p_i = ((gamma * v_h_i) * dt) + p_prev_i
    shared:  p_i = (((1 - m) * gamma * v_h_i) + (m * v_r_i)) * dt + p_prev_i

Evaluation order is fixed exactly as written so that independent
re-integrations of a logged command stream agree bit-for-bit, not merely
within a tolerance. gamma scales only the human term; the robot-planned
increment v_r arrives already scaled. m = 0 is pure teleoperation, m = 1
fully autonomous, anything between blends the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

Vector = tuple[float, ...]

DEFAULT_DT_MAX = 0.1  # seconds; sender-declared dt is clamped to this


class CommandRejected(ValueError):
    """Command violates a precondition and must not move the robot."""


def _as_vector(value: Sequence[float], name: str) -> Vector:
    try:
        vec = tuple(float(x) for x in value)
    except (TypeError, ValueError) as exc:
        raise CommandRejected(f"{name} is not a numeric vector") from exc
    if not vec:
        raise CommandRejected(f"{name} is empty")
    if not all(math.isfinite(x) for x in vec):
        raise CommandRejected(f"{name} has non-finite entries")
    return vec


@dataclass(frozen=True)
class IncrementalCommand:
    """Human incremental input: per-axis rate v_h (units/s) over interval dt."""

    v_h: Vector
    dt: float


@dataclass(frozen=True)
class AutonomyPlan:
    """Robot-planned incremental rate, already in robot units/s."""

    v_r: Vector


@dataclass(frozen=True)
class ControlParams:
    """Per-robot control configuration and safety limits."""

    gamma: float = 1.0
    m: float = 0.0
    dt_max: float = DEFAULT_DT_MAX
    v_max: Vector = ()
    workspace: tuple[tuple[float, float], ...] = ()
    k_p: float = 1.0

    def validate(self, dof: int) -> None:
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise CommandRejected(f"gamma must be > 0, got {self.gamma}")
        if not (math.isfinite(self.m) and 0.0 <= self.m <= 1.0):
            raise CommandRejected(f"m must be in [0,1], got {self.m}")
        if not (math.isfinite(self.dt_max) and self.dt_max > 0):
            raise CommandRejected(f"dt_max must be > 0, got {self.dt_max}")
        if len(self.v_max) != dof:
            raise CommandRejected(f"v_max length {len(self.v_max)} != dof {dof}")
        if not all(math.isfinite(v) and v > 0 for v in self.v_max):
            raise CommandRejected("v_max entries must be finite and > 0")
        if len(self.workspace) != dof:
            raise CommandRejected(f"workspace length {len(self.workspace)} != dof {dof}")
        for lo, hi in self.workspace:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise CommandRejected(f"workspace bounds invalid: ({lo}, {hi})")
        if not (math.isfinite(self.k_p) and self.k_p > 0):
            raise CommandRejected(f"k_p must be > 0, got {self.k_p}")


def default_params(dof: int, span: float = 1000.0) -> ControlParams:
    """Permissive limits for robots that declare none."""
    return ControlParams(
        v_max=tuple(1.0 for _ in range(dof)),
        workspace=tuple((-span, span) for _ in range(dof)),
    )


def _check_step_inputs(p_prev, v_h, dt, gamma) -> tuple[Vector, Vector]:
    p = _as_vector(p_prev, "p_prev")
    v = _as_vector(v_h, "v_h")
    if len(p) != len(v):
        raise CommandRejected(f"dimension mismatch: pose {len(p)} vs v_h {len(v)}")
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise CommandRejected(f"dt must be > 0, got {dt!r}")
    if not (isinstance(gamma, (int, float)) and math.isfinite(gamma) and gamma > 0):
        raise CommandRejected(f"gamma must be > 0, got {gamma!r}")
    return p, v


def integrate_teleop(
    p_prev: Sequence[float], cmd: IncrementalCommand, gamma: float
) -> Vector:
    """One pure teleoperation step of the commanded setpoint."""
    p, v = _check_step_inputs(p_prev, cmd.v_h, cmd.dt, gamma)
    dt = float(cmd.dt)
    gamma = float(gamma)
    return tuple(((gamma * v[i]) * dt) + p[i] for i in range(len(p)))


def integrate_shared(
    p_prev: Sequence[float],
    cmd: IncrementalCommand,
    plan: AutonomyPlan,
    gamma: float,
    m: float,
) -> Vector:
    """One shared-control step blending human and robot increments."""
    p, v = _check_step_inputs(p_prev, cmd.v_h, cmd.dt, gamma)
    if not (isinstance(m, (int, float)) and math.isfinite(m) and 0.0 <= m <= 1.0):
        raise CommandRejected(f"m must be in [0,1], got {m!r}")
    vr = _as_vector(plan.v_r, "v_r")
    if len(vr) != len(p):
        raise CommandRejected(f"dimension mismatch: pose {len(p)} vs v_r {len(vr)}")
    dt = float(cmd.dt)
    gamma = float(gamma)
    m = float(m)
    return tuple(
        (((1.0 - m) * gamma * v[i]) + (m * vr[i])) * dt + p[i]
        for i in range(len(p))
    )


def clamp_rate(v: Sequence[float], v_max: Sequence[float]) -> Vector:
    """Per-axis saturation of a rate vector to [-v_max_i, v_max_i]."""
    v = tuple(float(x) for x in v)
    limits = tuple(float(x) for x in v_max)
    if len(v) != len(limits):
        raise CommandRejected(f"dimension mismatch: v {len(v)} vs v_max {len(limits)}")
    return tuple(min(max(v[i], -limits[i]), limits[i]) for i in range(len(v)))


def clamp_workspace(
    p: Sequence[float], bounds: Sequence[tuple[float, float]]
) -> Vector:
    """Per-axis projection of a pose onto its workspace box."""
    p = tuple(float(x) for x in p)
    if len(p) != len(bounds):
        raise CommandRejected(f"dimension mismatch: pose {len(p)} vs bounds {len(bounds)}")
    return tuple(min(max(p[i], bounds[i][0]), bounds[i][1]) for i in range(len(p)))


def autonomy_mode(m: float) -> str:
    """Map the blend weight to its named mode."""
    if not (isinstance(m, (int, float)) and math.isfinite(m) and 0.0 <= m <= 1.0):
        raise CommandRejected(f"m must be in [0,1], got {m!r}")
    if m == 0.0:
        return "teleop"
    if m == 1.0:
        return "autonomous"
    return "shared"


def plan_toward(
    goal: Sequence[float],
    pose: Sequence[float],
    k_p: float,
    v_max: Sequence[float],
) -> Vector:
    """Proportional rate toward a goal, saturated to the rate limits."""
    g = _as_vector(goal, "goal")
    p = _as_vector(pose, "pose")
    if len(g) != len(p):
        raise CommandRejected(f"dimension mismatch: goal {len(g)} vs pose {len(p)}")
    return clamp_rate(tuple(k_p * (g[i] - p[i]) for i in range(len(g))), v_max)


def apply_command(
    p_prev: Sequence[float],
    v_h: Sequence[float],
    dt: float,
    gamma: float,
    m: float,
    v_r: Sequence[float] | None,
    params: ControlParams,
) -> Vector:
    """Full admission pipeline for one operator command.

    The blended per-axis rate is saturated to v_max, integrated over dt
    (clamped to dt_max), and the resulting setpoint projected onto the
    workspace. With no limit engaged this is bit-identical to the plain
    integrators above.
    """
    p, v = _check_step_inputs(p_prev, v_h, dt, gamma)
    if not (isinstance(m, (int, float)) and math.isfinite(m) and 0.0 <= m <= 1.0):
        raise CommandRejected(f"m must be in [0,1], got {m!r}")
    if v_r is None:
        vr = tuple(0.0 for _ in p)
    else:
        vr = _as_vector(v_r, "v_r")
        if len(vr) != len(p):
            raise CommandRejected(f"dimension mismatch: pose {len(p)} vs v_r {len(vr)}")
    dt = min(float(dt), params.dt_max)
    gamma = float(gamma)
    m = float(m)
    blended = tuple(
        ((1.0 - m) * gamma * v[i]) + (m * vr[i]) for i in range(len(p))
    )
    limited = clamp_rate(blended, params.v_max)
    stepped = tuple((limited[i] * dt) + p[i] for i in range(len(p)))
    return clamp_workspace(stepped, params.workspace)
