// Single-page console: login, device list, per-kind panels (teleop pad,
// sensor charts, live video), and an alert/mission feed. One WebSocket plus
// plain HTTP against the gateway; rendered robot poses come exclusively from
// server events, never from locally echoed input.

import { ApiError, GatewayClient, GatingError } from "./api.js";
import { TelemetryFeed, type FeedState } from "./events.js";
import { allows, canOperate } from "./gating.js";
import { SeriesBoard, toPolyline } from "./series.js";
import { SessionState } from "./state.js";
import { CommandScheduler } from "./teleop.js";
import { isStale, VideoFeed, type VideoFrame } from "./video.js";
import type { DeviceDetail, Mission, TelemetryEvent } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const loginView = el<HTMLElement>("login-view");
const dashboardView = el<HTMLElement>("dashboard-view");
const loginForm = el<HTMLFormElement>("login-form");
const loginError = el<HTMLParagraphElement>("login-error");
const connBadge = el<HTMLSpanElement>("conn-badge");
const whoami = el<HTMLSpanElement>("whoami");
const deviceList = el<HTMLUListElement>("device-list");
const deviceEmpty = el<HTMLParagraphElement>("device-empty");
const mainEmpty = el<HTMLParagraphElement>("main-empty");
const robotPanel = el<HTMLDivElement>("robot-panel");
const robotNotice = el<HTMLParagraphElement>("robot-notice");
const holdBtn = el<HTMLButtonElement>("hold-btn");
const pad = el<HTMLDivElement>("pad");
const axisButtons = el<HTMLDivElement>("axis-buttons");
const gammaSlider = el<HTMLInputElement>("gamma-slider");
const blendSlider = el<HTMLInputElement>("blend-slider");
const goalForm = el<HTMLFormElement>("goal-form");
const sensorPanel = el<HTMLDivElement>("sensor-panel");
const chartsBox = el<HTMLDivElement>("charts");
const cameraPanel = el<HTMLDivElement>("camera-panel");
const videoImg = el<HTMLImageElement>("video-img");
const videoPlaceholder = el<HTMLParagraphElement>("video-placeholder");
const videoOverlay = el<HTMLSpanElement>("video-overlay");
const alertList = el<HTMLUListElement>("alert-list");
const missionList = el<HTMLUListElement>("mission-list");

const state = new SessionState();
const board = new SeriesBoard();
const devices = new Map<string, DeviceDetail>();
const missions = new Map<string, Mission>();
const channelUnits = new Map<string, string>();

let client: GatewayClient | null = null;
let feed: TelemetryFeed | null = null;
let scheduler: CommandScheduler | null = null;
let video: VideoFeed | null = null;
let videoFrameAt: number | null = null;
let videoSeq = -1;
let videoUrl: string | null = null;
let controlLocked = false;
let pollTimer: number | null = null;
let overlayTimer: number | null = null;
let chartTimer: number | null = null;

const KEY_AXES: Record<string, [number, 1 | -1]> = {
  w: [0, 1],
  s: [0, -1],
  a: [1, -1],
  d: [1, 1],
  q: [2, -1],
  e: [2, 1],
};

document.addEventListener("DOMContentLoaded", () => {
  el<HTMLInputElement>("login-base").value =
    `${location.protocol}//${location.hostname || "localhost"}:8080`;
});

// --- login / logout --------------------------------------------------------

loginForm.addEventListener("submit", async (ev) => {
  ev.preventDefault();
  loginError.hidden = true;
  const base = el<HTMLInputElement>("login-base").value.trim();
  const username = el<HTMLInputElement>("login-username").value.trim();
  const password = el<HTMLInputElement>("login-password").value;
  const candidate = new GatewayClient(base);
  try {
    const login = await candidate.login(username, password);
    client = candidate;
    state.loggedInAs(login);
    enterDashboard();
  } catch (err) {
    // The gateway reports bad username and bad password identically; show
    // its message as-is so the console cannot leak which part was wrong.
    loginError.textContent =
      err instanceof ApiError ? err.message : "gateway unreachable";
    loginError.hidden = false;
  }
});

el<HTMLButtonElement>("logout-btn").addEventListener("click", async () => {
  const c = client;
  leaveDashboard();
  if (c !== null) {
    try {
      await c.logout();
    } catch {
      // Token may already be dead; local teardown is what matters here.
    }
  }
});

function enterDashboard(): void {
  loginView.hidden = true;
  dashboardView.hidden = false;
  whoami.textContent = `${state.username} · ${state.role}`;
  startFeed();
  void refreshDevices();
  void refreshMissions();
  pollTimer = window.setInterval(() => void refreshDevices(), 5000);
}

function leaveDashboard(): void {
  feed?.close();
  feed = null;
  deselectPanels();
  if (pollTimer !== null) {
    clearInterval(pollTimer);
    pollTimer = null;
  }
  devices.clear();
  missions.clear();
  state.loggedOut();
  client = null;
  deviceList.replaceChildren();
  alertList.replaceChildren();
  missionList.replaceChildren();
  dashboardView.hidden = true;
  loginView.hidden = false;
  loginForm.reset();
  el<HTMLInputElement>("login-base").value =
    `${location.protocol}//${location.hostname || "localhost"}:8080`;
}

// --- telemetry feed ---------------------------------------------------------

function startFeed(): void {
  if (client === null) return;
  const c = client;
  feed = new TelemetryFeed(() =>
    c.wsUrl(["reading", "robot_state", "command", "alert", "mission", "device"]),
  );
  feed.onState = (s: FeedState) => {
    connBadge.dataset.state = s;
    connBadge.textContent = s === "open" ? "live" : s;
  };
  feed.on("reading", onReadingEvent);
  feed.on("robot_state", onRobotStateEvent);
  feed.on("command", onCommandEvent);
  feed.on("alert", onAlertEvent);
  feed.on("mission", onMissionEvent);
  feed.on("device", () => void refreshDevices());
  feed.connect();
}

async function refreshDevices(): Promise<void> {
  if (client === null) return;
  try {
    const list = await client.devices();
    devices.clear();
    for (const d of list) {
      devices.set(d.id, d);
    }
    renderDeviceList();
  } catch {
    // Transient fetch failure; the next poll retries.
  }
}

async function refreshMissions(): Promise<void> {
  if (client === null) return;
  try {
    for (const m of await client.missions()) {
      missions.set(m.id, m);
    }
    renderMissions();
  } catch {
    // Transient; mission events keep the list moving regardless.
  }
}

// --- device list ------------------------------------------------------------

function renderDeviceList(): void {
  const items: HTMLLIElement[] = [];
  for (const d of [...devices.values()].sort((a, b) => a.id.localeCompare(b.id))) {
    const li = document.createElement("li");
    li.dataset.id = d.id;
    if (d.id === state.selectedDevice) li.classList.add("selected");
    if (d.state !== "online") li.classList.add("offline");
    const kind = document.createElement("span");
    kind.className = "kind";
    kind.textContent = d.kind;
    const name = document.createElement("span");
    name.textContent = d.id;
    li.append(kind, name);
    li.addEventListener("click", () => selectDevice(d.id));
    items.push(li);
  }
  deviceList.replaceChildren(...items);
  deviceEmpty.hidden = items.length > 0;
}

function selectDevice(id: string): void {
  if (state.selectedDevice === id) return;
  deselectPanels();
  state.selectedDevice = id;
  renderDeviceList();
  const detail = devices.get(id);
  if (detail === undefined) return;
  mainEmpty.hidden = true;
  if (detail.kind === "robot") {
    showRobotPanel(detail);
  } else if (detail.kind === "camera") {
    showCameraPanel(detail);
  } else {
    showSensorPanel(detail);
  }
}

function deselectPanels(): void {
  scheduler?.releaseAll();
  scheduler = null;
  video?.close();
  video = null;
  if (videoUrl !== null) {
    URL.revokeObjectURL(videoUrl);
    videoUrl = null;
  }
  if (overlayTimer !== null) {
    clearInterval(overlayTimer);
    overlayTimer = null;
  }
  if (chartTimer !== null) {
    clearInterval(chartTimer);
    chartTimer = null;
  }
  controlLocked = false;
  state.selectedDevice = null;
  robotPanel.hidden = true;
  sensorPanel.hidden = true;
  cameraPanel.hidden = true;
  robotNotice.hidden = true;
  mainEmpty.hidden = false;
}

// --- robot panel -------------------------------------------------------------

function showRobotPanel(detail: DeviceDetail): void {
  robotPanel.hidden = false;
  el<HTMLHeadingElement>("robot-title").textContent = `${detail.id} (${detail.dof} dof)`;
  renderRobotReadout(detail);
  buildAxisButtons(detail);
  scheduler = new CommandScheduler((cmd) => void sendCommand(cmd), {
    dof: detail.dof,
    params: () => ({ gamma: state.gamma, m: state.m }),
  });
  updateControlGates();
}

function renderRobotReadout(detail: DeviceDetail): void {
  el<HTMLElement>("robot-pose").textContent = fmtVec(detail.reported_pose ?? null);
  el<HTMLElement>("robot-setpoint").textContent = fmtVec(detail.setpoint ?? null);
  el<HTMLElement>("robot-goal").textContent = fmtVec(detail.goal ?? null);
  renderHolder(detail.controller);
}

function renderHolder(controller: string | null): void {
  const badge = el<HTMLSpanElement>("robot-holder");
  if (controller === null) {
    badge.textContent = "free";
  } else if (state.sessionId !== null && controller === state.sessionId) {
    badge.textContent = "held by you";
  } else {
    badge.textContent = "held by another operator";
  }
}

function buildAxisButtons(detail: DeviceDetail): void {
  axisButtons.replaceChildren();
  const axes = Math.min(detail.dof, 8);
  for (let i = 0; i < axes; i++) {
    const row = document.createElement("div");
    row.className = "axis-row";
    const name = document.createElement("span");
    name.className = "axis-name";
    name.textContent = `axis ${i}`;
    row.append(name, axisButton(i, -1), axisButton(i, 1));
    axisButtons.append(row);
  }
}

function axisButton(axis: number, direction: 1 | -1): HTMLButtonElement {
  const btn = document.createElement("button");
  btn.type = "button";
  btn.textContent = direction > 0 ? "+" : "−";
  btn.addEventListener("pointerdown", (ev) => {
    ev.preventDefault();
    scheduler?.press(axis, direction);
  });
  for (const evName of ["pointerup", "pointerleave", "pointercancel"] as const) {
    btn.addEventListener(evName, () => scheduler?.release(axis));
  }
  return btn;
}

/** Reflect role, hold, lock, and blend slider into what the pad offers. */
function updateControlGates(): void {
  const id = state.selectedDevice;
  if (id === null || robotPanel.hidden) return;
  const operator = canOperate(state.role);
  holdBtn.hidden = !operator;
  holdBtn.textContent = state.holds(id) ? "Release" : "Acquire";
  // Viewers get no control pad at all; operators see it but it only goes
  // live once the robot is actually held (and m < 1, and nothing is locked).
  pad.hidden = !operator;
  const padLive = state.padEnabled(id) && !controlLocked;
  pad.classList.toggle("disabled", !padLive);
  goalForm.hidden = !(state.goalEntryEnabled(id) && !controlLocked);
  if (!padLive) {
    scheduler?.releaseAll();
  }
}

holdBtn.addEventListener("click", async () => {
  const id = state.selectedDevice;
  if (client === null || id === null) return;
  robotNotice.hidden = true;
  try {
    if (state.holds(id)) {
      await client.release(id);
      state.released(id);
      renderHolder(null);
    } else {
      const res = await client.acquire(id);
      state.acquired(id);
      controlLocked = false;
      renderHolder(res.controller);
    }
  } catch (err) {
    showRobotError(err);
  }
  updateControlGates();
});

gammaSlider.addEventListener("input", () => {
  state.gamma = Number(gammaSlider.value);
  el<HTMLOutputElement>("gamma-value").value = state.gamma.toFixed(2);
});

blendSlider.addEventListener("input", () => {
  state.m = Number(blendSlider.value);
  el<HTMLOutputElement>("blend-value").value = state.m.toFixed(2);
  updateControlGates();
});

goalForm.addEventListener("submit", async (ev) => {
  ev.preventDefault();
  const id = state.selectedDevice;
  const detail = id !== null ? devices.get(id) : undefined;
  if (client === null || id === null || detail === undefined) return;
  const text = el<HTMLInputElement>("goal-input").value;
  const goal = text.split(",").map((part) => Number(part.trim()));
  if (goal.length !== detail.dof || goal.some((x) => !Number.isFinite(x))) {
    showNotice(`goal must be ${detail.dof} comma-separated numbers`);
    return;
  }
  try {
    await client.goal(id, goal);
    robotNotice.hidden = true;
  } catch (err) {
    showRobotError(err);
  }
});

async function sendCommand(cmd: {
  v_h: number[];
  dt: number;
  gamma: number;
  m: number;
}): Promise<void> {
  const id = state.selectedDevice;
  if (client === null || id === null) return;
  try {
    await client.command(id, cmd);
  } catch (err) {
    scheduler?.releaseAll();
    showRobotError(err);
  }
}

function showRobotError(err: unknown): void {
  if (err instanceof ApiError && err.status === 409) {
    showNotice("held by another operator");
  } else if (err instanceof ApiError && err.status === 403) {
    // The server says our hold or role is gone: lock the local controls.
    controlLocked = true;
    const id = state.selectedDevice;
    if (id !== null) state.released(id);
    showNotice("not permitted — controls locked");
    updateControlGates();
  } else if (err instanceof GatingError || err instanceof ApiError) {
    showNotice((err as Error).message);
  } else {
    showNotice("gateway unreachable");
  }
}

function showNotice(text: string): void {
  robotNotice.textContent = text;
  robotNotice.hidden = false;
}

// --- sensor panel -------------------------------------------------------------

function showSensorPanel(detail: DeviceDetail): void {
  sensorPanel.hidden = false;
  el<HTMLHeadingElement>("sensor-title").textContent = detail.id;
  void seedReadings(detail);
  renderCharts();
  chartTimer = window.setInterval(renderCharts, 500);
}

async function seedReadings(detail: DeviceDetail): Promise<void> {
  if (client === null) return;
  for (const channel of detail.channels ?? []) {
    try {
      const res = await client.readings(detail.id, channel, 600);
      for (const r of res.readings) {
        board.record(detail.id, channel, r.timestamp_ms, r.value);
        channelUnits.set(`${detail.id}/${channel}`, r.unit);
      }
    } catch {
      // Chart simply starts empty for this channel.
    }
  }
  renderCharts();
}

function renderCharts(): void {
  const id = state.selectedDevice;
  const detail = id !== null ? devices.get(id) : undefined;
  if (id === null || detail === undefined || sensorPanel.hidden) return;
  const channels = new Set([...(detail.channels ?? []), ...board.channels(id)]);
  const cards: HTMLElement[] = [];
  const now = Date.now();
  for (const channel of [...channels].sort()) {
    const series = board.get(id, channel);
    const card = document.createElement("div");
    card.className = "chart-card";
    const head = document.createElement("div");
    head.className = "chart-head";
    const name = document.createElement("span");
    name.textContent = channel;
    const latest = document.createElement("span");
    latest.className = "latest";
    const last = series?.latest() ?? null;
    const unit = channelUnits.get(`${id}/${channel}`) ?? "";
    latest.textContent = last === null ? "—" : `${last.v.toFixed(2)} ${unit}`.trim();
    head.append(name, latest);
    card.append(head);
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("viewBox", "0 0 560 120");
    svg.setAttribute("height", "120");
    if (series !== null) {
      const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
      line.setAttribute("points", toPolyline(series, now, 60_000, 560, 120));
      svg.append(line);
    }
    card.append(svg);
    cards.push(card);
  }
  chartsBox.replaceChildren(...cards);
  el<HTMLParagraphElement>("sensor-empty").hidden = cards.length > 0;
}

// --- camera panel ---------------------------------------------------------------

function showCameraPanel(detail: DeviceDetail): void {
  cameraPanel.hidden = false;
  el<HTMLHeadingElement>("camera-title").textContent = detail.id;
  videoImg.hidden = true;
  videoPlaceholder.hidden = false;
  videoPlaceholder.textContent = "Waiting for stream…";
  videoOverlay.hidden = true;
  videoFrameAt = null;
  videoSeq = -1;
  startVideo(detail.id);
  overlayTimer = window.setInterval(updateVideoOverlay, 250);
}

function startVideo(cameraId: string): void {
  if (client === null) return;
  video = new VideoFeed(client.streamUrl(cameraId), {
    onFrame: showFrame,
    onUnavailable: () => {
      videoImg.hidden = true;
      videoPlaceholder.hidden = false;
      videoPlaceholder.textContent = "No stream from this camera.";
    },
    onEnded: () => {
      // Stream dropped mid-flight: retry while the camera stays selected.
      if (state.selectedDevice === cameraId) {
        setTimeout(() => {
          if (state.selectedDevice === cameraId) startVideo(cameraId);
        }, 1500);
      }
    },
  });
  void video.run();
}

function showFrame(frame: VideoFrame): void {
  const url = URL.createObjectURL(
    new Blob([frame.data as BlobPart], { type: "image/jpeg" }),
  );
  videoImg.src = url;
  videoImg.hidden = false;
  videoPlaceholder.hidden = true;
  if (videoUrl !== null) {
    URL.revokeObjectURL(videoUrl);
  }
  videoUrl = url;
  videoFrameAt = Date.now();
  videoSeq = frame.seq;
}

function updateVideoOverlay(): void {
  if (videoFrameAt === null) return;
  const now = Date.now();
  const age = (now - videoFrameAt) / 1000;
  const stale = isStale(videoFrameAt, now);
  videoOverlay.hidden = false;
  videoOverlay.textContent = `#${videoSeq} · ${age.toFixed(1)}s ago${stale ? " · STALE" : ""}`;
  videoOverlay.classList.toggle("stale", stale);
}

// --- telemetry event handlers -----------------------------------------------------

function onReadingEvent(ev: TelemetryEvent): void {
  const { channel, value, unit, timestamp_ms } = ev.payload as {
    channel: string;
    value: number;
    unit: string;
    timestamp_ms: number;
  };
  if (ev.device_id === null || typeof channel !== "string") return;
  board.record(ev.device_id, channel, timestamp_ms, value);
  channelUnits.set(`${ev.device_id}/${channel}`, unit ?? "");
}

function onRobotStateEvent(ev: TelemetryEvent): void {
  if (ev.device_id !== state.selectedDevice) return;
  const pose = ev.payload["pose"];
  if (Array.isArray(pose)) {
    el<HTMLElement>("robot-pose").textContent = fmtVec(pose as number[]);
  }
}

function onCommandEvent(ev: TelemetryEvent): void {
  if (ev.device_id !== state.selectedDevice) return;
  const setpoint = ev.payload["setpoint"];
  if (Array.isArray(setpoint)) {
    el<HTMLElement>("robot-setpoint").textContent = fmtVec(setpoint as number[]);
  }
  const goal = ev.payload["goal"];
  if (Array.isArray(goal)) {
    el<HTMLElement>("robot-goal").textContent = fmtVec(goal as number[]);
  }
}

function onAlertEvent(ev: TelemetryEvent): void {
  const p = ev.payload as {
    channel?: string;
    value?: number;
    unit?: string;
    min?: number;
    max?: number;
  };
  const li = document.createElement("li");
  const headline = document.createElement("strong");
  headline.textContent = `${ev.device_id}: ${p.channel} = ${fmtNum(p.value)} ${p.unit ?? ""}`.trim();
  const meta = document.createElement("time");
  meta.textContent = `outside [${fmtNum(p.min)}, ${fmtNum(p.max)}] · ${new Date(
    ev.timestamp_ms,
  ).toLocaleTimeString()}`;
  li.append(headline, meta);
  alertList.prepend(li);
  while (alertList.children.length > 20) {
    alertList.lastElementChild?.remove();
  }
  el<HTMLParagraphElement>("alert-empty").hidden = true;
}

function onMissionEvent(ev: TelemetryEvent): void {
  const mission = ev.payload as unknown as Mission;
  if (typeof mission.id !== "string") return;
  missions.set(mission.id, mission);
  renderMissions();
}

function renderMissions(): void {
  const items: HTMLLIElement[] = [];
  const sorted = [...missions.values()].sort((a, b) => b.created_ms - a.created_ms);
  for (const m of sorted.slice(0, 20)) {
    const li = document.createElement("li");
    li.dataset.status = m.status;
    const head = document.createElement("strong");
    head.textContent = `${m.kind} → ${m.target_robot} (${m.status})`;
    const meta = document.createElement("span");
    meta.className = "meta";
    meta.textContent = `goal ${fmtVec(m.goal)}`;
    li.append(head, meta);
    if (m.status === "dispatched" && allows(state.role, "ack_mission")) {
      const ack = document.createElement("button");
      ack.type = "button";
      ack.textContent = "Acknowledge";
      ack.addEventListener("click", async () => {
        try {
          const updated = await client?.ackMission(m.id);
          if (updated) {
            missions.set(updated.id, updated);
            renderMissions();
          }
        } catch {
          // Another operator may have beaten us to it; the next mission
          // event straightens the list out.
        }
      });
      li.append(ack);
    }
    items.push(li);
  }
  missionList.replaceChildren(...items);
  el<HTMLParagraphElement>("mission-empty").hidden = items.length > 0;
}

// --- keyboard teleop ----------------------------------------------------------------

window.addEventListener("keydown", (ev) => {
  if (ev.repeat || isTyping(ev)) return;
  const mapping = KEY_AXES[ev.key.toLowerCase()];
  if (mapping !== undefined && scheduler !== null && padIsLive()) {
    scheduler.press(mapping[0], mapping[1]);
    ev.preventDefault();
  }
});

window.addEventListener("keyup", (ev) => {
  const mapping = KEY_AXES[ev.key.toLowerCase()];
  if (mapping !== undefined) {
    scheduler?.release(mapping[0]);
  }
});

window.addEventListener("blur", () => scheduler?.releaseAll());

function padIsLive(): boolean {
  const id = state.selectedDevice;
  return id !== null && state.padEnabled(id) && !controlLocked;
}

function isTyping(ev: KeyboardEvent): boolean {
  const target = ev.target;
  return (
    target instanceof HTMLInputElement ||
    target instanceof HTMLTextAreaElement ||
    target instanceof HTMLSelectElement
  );
}

// --- formatting ------------------------------------------------------------------------

function fmtVec(vec: number[] | null): string {
  if (vec === null || vec.length === 0) return "—";
  return `[${vec.map((x) => x.toFixed(3)).join(", ")}]`;
}

function fmtNum(x: number | undefined): string {
  return x === undefined ? "?" : x.toFixed(2);
}
