// Typed REST client for the gateway. Every privileged call is gated on the
// logged-in role before any bytes leave the page; the server still enforces
// its own checks, this just keeps the console from issuing requests its role
// disallows.

import { allows, type Action } from "./gating.js";
import type {
  CommandResponse,
  DeviceDetail,
  GoalResponse,
  HoldResponse,
  LoginResponse,
  Mission,
  ReadingsResponse,
  ResetResponse,
  Role,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Raised locally when the current role may not perform an action at all. */
export class GatingError extends Error {
  constructor(action: Action) {
    super(`current role may not ${action.replaceAll("_", " ")}`);
    this.name = "GatingError";
  }
}

export interface CommandRequest {
  v_h: number[];
  dt: number;
  gamma?: number;
  m?: number;
}

export class GatewayClient {
  readonly base: string;
  token: string | null = null;
  role: Role | null = null;

  private readonly fetchFn: typeof fetch;

  constructor(base: string, fetchFn: typeof fetch = (...args) => fetch(...args)) {
    this.base = base.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  // --- session -----------------------------------------------------------

  async login(username: string, password: string): Promise<LoginResponse> {
    const res = await this.request<LoginResponse>("POST", "/api/login", {
      username,
      password,
    });
    this.token = res.token;
    this.role = res.role;
    return res;
  }

  async logout(): Promise<void> {
    try {
      await this.request("POST", "/api/logout", undefined, "logout");
    } finally {
      this.token = null;
      this.role = null;
    }
  }

  // --- read-only views ----------------------------------------------------

  async devices(): Promise<DeviceDetail[]> {
    const res = await this.request<{ devices: DeviceDetail[] }>(
      "GET",
      "/api/devices",
      undefined,
      "view_devices",
    );
    return res.devices;
  }

  async device(id: string): Promise<DeviceDetail> {
    return this.request("GET", `/api/devices/${enc(id)}`, undefined, "view_devices");
  }

  async readings(id: string, channel: string, limit = 200): Promise<ReadingsResponse> {
    const query = `channel=${enc(channel)}&limit=${limit}`;
    return this.request(
      "GET",
      `/api/sensors/${enc(id)}/readings?${query}`,
      undefined,
      "view_readings",
    );
  }

  async missions(): Promise<Mission[]> {
    const res = await this.request<{ missions: Mission[] }>(
      "GET",
      "/api/missions",
      undefined,
      "view_missions",
    );
    return res.missions;
  }

  // --- robot control ------------------------------------------------------

  async acquire(robotId: string): Promise<HoldResponse> {
    return this.request(
      "POST",
      `/api/robots/${enc(robotId)}/acquire`,
      {},
      "acquire_robot",
    );
  }

  async release(robotId: string, force = false): Promise<HoldResponse> {
    return this.request(
      "POST",
      `/api/robots/${enc(robotId)}/release`,
      force ? { force: true } : {},
      force ? "force_release" : "release_robot",
    );
  }

  async command(robotId: string, cmd: CommandRequest): Promise<CommandResponse> {
    return this.request(
      "POST",
      `/api/robots/${enc(robotId)}/command`,
      cmd,
      "send_command",
    );
  }

  async goal(robotId: string, goal: number[]): Promise<GoalResponse> {
    return this.request("POST", `/api/robots/${enc(robotId)}/goal`, { goal }, "set_goal");
  }

  async reset(robotId: string, pose: number[]): Promise<ResetResponse> {
    return this.request(
      "POST",
      `/api/robots/${enc(robotId)}/reset`,
      { pose },
      "reset_setpoint",
    );
  }

  async ackMission(missionId: string): Promise<Mission> {
    return this.request(
      "POST",
      `/api/missions/${enc(missionId)}/ack`,
      {},
      "ack_mission",
    );
  }

  // --- URL builders (media elements cannot set Authorization headers) -----

  frameUrl(cameraId: string): string {
    return `${this.base}/api/cameras/${enc(cameraId)}/frame?token=${enc(this.token ?? "")}`;
  }

  streamUrl(cameraId: string): string {
    return `${this.base}/api/cameras/${enc(cameraId)}/stream?token=${enc(this.token ?? "")}`;
  }

  wsUrl(topics: string[]): string {
    const wsBase = this.base.replace(/^http/, "ws");
    const query = `token=${enc(this.token ?? "")}&topics=${enc(topics.join(","))}`;
    return `${wsBase}/ws/telemetry?${query}`;
  }

  // --- plumbing -----------------------------------------------------------

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    action?: Action,
  ): Promise<T> {
    if (action !== undefined && !allows(this.role, action)) {
      throw new GatingError(action);
    }
    const headers: Record<string, string> = {};
    if (this.token !== null) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.base}${path}`, init);
    if (!response.ok) {
      throw await toApiError(response);
    }
    return (await response.json()) as T;
  }
}

function enc(value: string): string {
  return encodeURIComponent(value);
}

async function toApiError(response: Response): Promise<ApiError> {
  let code = `http_${response.status}`;
  let message = response.statusText || `request failed (${response.status})`;
  try {
    const body = (await response.json()) as { error?: { code?: string; message?: string } };
    if (body && typeof body.error === "object" && body.error !== null) {
      if (typeof body.error.code === "string") code = body.error.code;
      if (typeof body.error.message === "string") message = body.error.message;
    }
  } catch {
    // Non-JSON error body; keep the HTTP fallback.
  }
  return new ApiError(response.status, code, message);
}
