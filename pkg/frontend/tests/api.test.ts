import { describe, expect, it } from "vitest";

import { ApiError, GatewayClient, GatingError } from "../src/api.js";
import type { Role } from "../src/types.js";

interface Call {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: unknown;
}

function makeClient(responses: Response[]): { client: GatewayClient; calls: Call[] } {
  const calls: Call[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    calls.push({
      url: String(input),
      method: init?.method ?? "GET",
      headers: (init?.headers ?? {}) as Record<string, string>,
      body: typeof init?.body === "string" ? JSON.parse(init.body) : undefined,
    });
    const next = responses.shift();
    if (next === undefined) {
      throw new Error("unexpected request");
    }
    return next;
  }) as typeof fetch;
  return { client: new GatewayClient("http://gw:8080/", fetchFn), calls };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

const LOGIN_BODY = {
  token: "tok-abc",
  username: "op-kim",
  role: "operator" as Role,
  session_id: "sess-9",
  expires_ms: 123,
};

async function loggedIn(role: Role, responses: Response[]) {
  const h = makeClient([json(200, { ...LOGIN_BODY, role }), ...responses]);
  await h.client.login("op-kim", "pw");
  h.calls.length = 0;
  return h;
}

describe("login", () => {
  it("posts credentials and remembers token and role", async () => {
    const { client, calls } = makeClient([json(200, LOGIN_BODY)]);
    const res = await client.login("op-kim", "pw");
    expect(calls[0].url).toBe("http://gw:8080/api/login");
    expect(calls[0].method).toBe("POST");
    expect(calls[0].body).toEqual({ username: "op-kim", password: "pw" });
    expect(calls[0].headers["Content-Type"]).toBe("application/json");
    expect(res.session_id).toBe("sess-9");
    expect(client.token).toBe("tok-abc");
    expect(client.role).toBe("operator");
  });

  it("surfaces the server's uniform rejection message", async () => {
    const { client } = makeClient([
      json(401, { error: { code: "unauthorized", message: "invalid credentials" } }),
    ]);
    const err = await client.login("op-kim", "wrong").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(401);
    expect(err.code).toBe("unauthorized");
    expect(err.message).toBe("invalid credentials");
    expect(client.token).toBeNull();
  });
});

describe("authenticated requests", () => {
  it("sends the bearer token on every call", async () => {
    const { client, calls } = await loggedIn("viewer", [json(200, { devices: [] })]);
    await client.devices();
    expect(calls[0].headers["Authorization"]).toBe("Bearer tok-abc");
  });

  it("builds the readings query", async () => {
    const { client, calls } = await loggedIn("viewer", [
      json(200, { device_id: "t", channel: "temperature", readings: [] }),
    ]);
    await client.readings("temp 1", "temperature", 50);
    expect(calls[0].url).toBe(
      "http://gw:8080/api/sensors/temp%201/readings?channel=temperature&limit=50",
    );
  });

  it("unwraps list envelopes", async () => {
    const { client } = await loggedIn("viewer", [
      json(200, { devices: [{ id: "r1" }] }),
      json(200, { missions: [{ id: "m1" }] }),
    ]);
    expect(await client.devices()).toEqual([{ id: "r1" }]);
    expect(await client.missions()).toEqual([{ id: "m1" }]);
  });

  it("maps error envelopes to ApiError", async () => {
    const { client } = await loggedIn("operator", [
      json(409, { error: { code: "conflict", message: "robot is held" } }),
    ]);
    const err = await client.acquire("arm-1").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.message).toBe("robot is held");
  });

  it("falls back to HTTP status text on non-JSON error bodies", async () => {
    const { client } = await loggedIn("viewer", [
      new Response("<html>boom</html>", { status: 502, statusText: "Bad Gateway" }),
    ]);
    const err = await client.devices().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("http_502");
    expect(err.message).toBe("Bad Gateway");
  });
});

describe("client-side gating", () => {
  it("refuses operator actions for viewers without touching the network", async () => {
    const { client, calls } = await loggedIn("viewer", []);
    for (const attempt of [
      () => client.acquire("arm-1"),
      () => client.command("arm-1", { v_h: [0.1], dt: 0.05 }),
      () => client.goal("arm-1", [0]),
      () => client.reset("arm-1", [0]),
      () => client.release("arm-1"),
      () => client.ackMission("m-1"),
    ]) {
      const err = await attempt().catch((e) => e);
      expect(err).toBeInstanceOf(GatingError);
    }
    expect(calls).toHaveLength(0);
  });

  it("lets operators send commands", async () => {
    const { client, calls } = await loggedIn("operator", [
      json(200, { device_id: "arm-1", cmd_seq: 1, mode: "teleop", setpoint: [0.005], m: 0, gamma: 1 }),
    ]);
    const res = await client.command("arm-1", { v_h: [0.1], dt: 0.05, gamma: 1, m: 0 });
    expect(calls[0].url).toBe("http://gw:8080/api/robots/arm-1/command");
    expect(calls[0].body).toEqual({ v_h: [0.1], dt: 0.05, gamma: 1, m: 0 });
    expect(res.setpoint).toEqual([0.005]);
  });

  it("reserves forced release for admins", async () => {
    const op = await loggedIn("operator", []);
    const err = await op.client.release("arm-1", true).catch((e) => e);
    expect(err).toBeInstanceOf(GatingError);
    expect(op.calls).toHaveLength(0);

    const admin = await loggedIn("admin", [json(200, { device_id: "arm-1", controller: null })]);
    await admin.client.release("arm-1", true);
    expect(admin.calls[0].body).toEqual({ force: true });
  });

  it("requires a login before any gated call", async () => {
    const { client, calls } = makeClient([]);
    const err = await client.devices().catch((e) => e);
    expect(err).toBeInstanceOf(GatingError);
    expect(calls).toHaveLength(0);
  });
});

describe("URL builders", () => {
  it("appends the token as a query parameter for media elements", async () => {
    const { client } = await loggedIn("viewer", []);
    expect(client.frameUrl("cam-1")).toBe(
      "http://gw:8080/api/cameras/cam-1/frame?token=tok-abc",
    );
    expect(client.streamUrl("cam/odd")).toBe(
      "http://gw:8080/api/cameras/cam%2Fodd/stream?token=tok-abc",
    );
  });

  it("derives the telemetry URL with scheme swap and topic list", async () => {
    const { client } = await loggedIn("viewer", []);
    expect(client.wsUrl(["reading", "alert"])).toBe(
      "ws://gw:8080/ws/telemetry?token=tok-abc&topics=reading%2Calert",
    );
  });

  it("swaps https for wss", () => {
    const client = new GatewayClient("https://gw.example:8443");
    client.token = "t";
    expect(client.wsUrl(["device"])).toBe(
      "wss://gw.example:8443/ws/telemetry?token=t&topics=device",
    );
  });
});
