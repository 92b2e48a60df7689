import { describe, expect, it } from "vitest";

import { clampBlend, clampGamma, GAMMA_MAX, GAMMA_MIN, SessionState } from "../src/state.js";
import type { LoginResponse } from "../src/types.js";

function login(role: LoginResponse["role"]): LoginResponse {
  return {
    token: "tok-1",
    username: "someone",
    role,
    session_id: "sess-1",
    expires_ms: 9_999_999,
  };
}

describe("slider invariants", () => {
  it("keeps gamma strictly positive", () => {
    expect(clampGamma(0)).toBe(GAMMA_MIN);
    expect(clampGamma(-3)).toBe(GAMMA_MIN);
    expect(clampGamma(NaN)).toBe(GAMMA_MIN);
    expect(clampGamma(1.25)).toBe(1.25);
    expect(clampGamma(999)).toBe(GAMMA_MAX);
  });

  it("keeps the blend inside [0, 1]", () => {
    expect(clampBlend(-0.5)).toBe(0);
    expect(clampBlend(0.4)).toBe(0.4);
    expect(clampBlend(7)).toBe(1);
    expect(clampBlend(NaN)).toBe(0);
  });

  it("applies the clamps through the setters", () => {
    const s = new SessionState();
    s.gamma = -1;
    expect(s.gamma).toBe(GAMMA_MIN);
    s.m = 2;
    expect(s.m).toBe(1);
  });
});

describe("control gating", () => {
  it("never enables controls for viewers, even with a hold recorded", () => {
    const s = new SessionState();
    s.loggedInAs(login("viewer"));
    s.acquired("arm-1");
    expect(s.controlsEnabled("arm-1")).toBe(false);
  });

  it("requires both operator role and an acquired hold", () => {
    const s = new SessionState();
    s.loggedInAs(login("operator"));
    expect(s.controlsEnabled("arm-1")).toBe(false);
    s.acquired("arm-1");
    expect(s.controlsEnabled("arm-1")).toBe(true);
    expect(s.controlsEnabled("arm-2")).toBe(false);
    s.released("arm-1");
    expect(s.controlsEnabled("arm-1")).toBe(false);
  });

  it("hands the pad to goal entry at m = 1", () => {
    const s = new SessionState();
    s.loggedInAs(login("operator"));
    s.acquired("arm-1");
    s.m = 0.4;
    expect(s.padEnabled("arm-1")).toBe(true);
    expect(s.goalEntryEnabled("arm-1")).toBe(false);
    s.m = 1.0;
    expect(s.padEnabled("arm-1")).toBe(false);
    expect(s.goalEntryEnabled("arm-1")).toBe(true);
  });

  it("clears everything on logout", () => {
    const s = new SessionState();
    s.loggedInAs(login("admin"));
    s.acquired("arm-1");
    s.selectedDevice = "arm-1";
    s.loggedOut();
    expect(s.loggedIn).toBe(false);
    expect(s.role).toBeNull();
    expect(s.selectedDevice).toBeNull();
    expect(s.holds("arm-1")).toBe(false);
    expect(s.controlsEnabled("arm-1")).toBe(false);
  });
});
