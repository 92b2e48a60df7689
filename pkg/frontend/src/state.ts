// Console session state. The invariants here gate what the UI renders and
// emits; they never substitute for the server's own checks.

import { canOperate } from "./gating.js";
import type { LoginResponse, Role } from "./types.js";

export const GAMMA_MIN = 0.05;
export const GAMMA_MAX = 5.0;

export function clampGamma(value: number): number {
  if (!Number.isFinite(value) || value <= 0) {
    return GAMMA_MIN;
  }
  return Math.min(Math.max(value, GAMMA_MIN), GAMMA_MAX);
}

export function clampBlend(value: number): number {
  if (!Number.isFinite(value)) {
    return 0;
  }
  return Math.min(Math.max(value, 0), 1);
}

export class SessionState {
  token: string | null = null;
  username: string | null = null;
  role: Role | null = null;
  sessionId: string | null = null;
  selectedDevice: string | null = null;
  private held = new Set<string>();
  private gammaValue = 1.0;
  private blendValue = 0.0;

  get gamma(): number {
    return this.gammaValue;
  }

  /** Motion-scaling factor; silently clamped to a positive, sane range. */
  set gamma(value: number) {
    this.gammaValue = clampGamma(value);
  }

  get m(): number {
    return this.blendValue;
  }

  /** Autonomy blend; clamped to [0, 1]. */
  set m(value: number) {
    this.blendValue = clampBlend(value);
  }

  get loggedIn(): boolean {
    return this.token !== null;
  }

  loggedInAs(login: LoginResponse): void {
    this.token = login.token;
    this.username = login.username;
    this.role = login.role;
    this.sessionId = login.session_id;
  }

  loggedOut(): void {
    this.token = null;
    this.username = null;
    this.role = null;
    this.sessionId = null;
    this.selectedDevice = null;
    this.held.clear();
  }

  acquired(robotId: string): void {
    this.held.add(robotId);
  }

  released(robotId: string): void {
    this.held.delete(robotId);
  }

  holds(robotId: string): boolean {
    return this.held.has(robotId);
  }

  /**
   * Whether motion widgets for `robotId` may be live: requires an
   * operator-or-better role and an acquired hold on that robot.
   */
  controlsEnabled(robotId: string): boolean {
    return canOperate(this.role) && this.held.has(robotId);
  }

  /** At m = 1 the pad goes dark and goal entry takes over. */
  padEnabled(robotId: string): boolean {
    return this.controlsEnabled(robotId) && this.blendValue < 1.0;
  }

  goalEntryEnabled(robotId: string): boolean {
    return this.controlsEnabled(robotId) && this.blendValue >= 1.0;
  }
}
