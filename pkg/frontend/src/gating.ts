// Client-side mirror of the gateway's role checks. This only decides what
// the UI offers; the server re-checks every request regardless.

import type { Role } from "./types.js";

export const ROLE_RANK: Record<Role, number> = {
  viewer: 0,
  operator: 1,
  developer: 2,
  admin: 3,
};

/** Actions the console can trigger, keyed to the gateway's minimum role. */
export const ACTION_MIN_ROLE = {
  view_devices: "viewer",
  view_readings: "viewer",
  view_frames: "viewer",
  view_missions: "viewer",
  subscribe_telemetry: "viewer",
  logout: "viewer",
  acquire_robot: "operator",
  release_robot: "operator",
  send_command: "operator",
  set_goal: "operator",
  reset_setpoint: "operator",
  ack_mission: "operator",
  export_session: "operator",
  update_rules: "developer",
  force_release: "admin",
} as const;

export type Action = keyof typeof ACTION_MIN_ROLE;

export function roleAtLeast(role: Role, floor: Role): boolean {
  return ROLE_RANK[role] >= ROLE_RANK[floor];
}

export function allows(role: Role | null, action: Action): boolean {
  if (role === null) {
    return false;
  }
  return roleAtLeast(role, ACTION_MIN_ROLE[action]);
}

/** True when the role may drive robots at all (gates the whole control pad). */
export function canOperate(role: Role | null): boolean {
  return role !== null && roleAtLeast(role, "operator");
}
