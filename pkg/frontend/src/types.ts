// Wire shapes exchanged with the gateway's REST and WebSocket interfaces.

export type Role = "viewer" | "operator" | "developer" | "admin";

export interface LoginResponse {
  token: string;
  username: string;
  role: Role;
  session_id: string;
  expires_ms: number;
}

export interface ControlParams {
  gamma: number;
  m: number;
  dt_max: number;
  v_max: number[];
  workspace: [number, number][];
  k_p: number;
}

export interface DeviceDetail {
  id: string;
  kind: "robot" | "sensor" | "actuator" | "camera";
  dof: number;
  state: string;
  last_seen_ms: number;
  controller: string | null;
  uuid: string;
  // robots
  control?: ControlParams;
  setpoint?: number[];
  reported_pose?: number[] | null;
  goal?: number[] | null;
  cmd_seq?: number;
  // sensors
  channels?: string[];
  // cameras
  frame?: { frame_seq: number; timestamp_ms: number } | null;
}

export interface Reading {
  value: number;
  unit: string;
  timestamp_ms: number;
}

export interface ReadingsResponse {
  device_id: string;
  channel: string;
  readings: Reading[];
}

export interface CommandResponse {
  device_id: string;
  cmd_seq: number;
  mode: string;
  setpoint: number[];
  m: number;
  gamma: number;
}

export interface GoalResponse {
  device_id: string;
  mode: "autonomous";
  goal: number[];
}

export interface ResetResponse {
  device_id: string;
  setpoint: number[];
  cmd_seq: number;
}

export interface HoldResponse {
  device_id: string;
  controller: string | null;
}

export interface Mission {
  id: string;
  kind: string;
  target_robot: string;
  goal: number[];
  cause: Record<string, unknown>;
  status: "pending" | "dispatched" | "acknowledged" | "done";
  created_ms: number;
  updated_ms: number;
}

/** One fan-out event from GET /ws/telemetry. */
export interface TelemetryEvent {
  type: string;
  device_id: string | null;
  payload: Record<string, unknown>;
  timestamp_ms: number;
}

export interface ErrorBody {
  error: { code: string; message: string };
}
