// Telemetry fan-out client: one WebSocket, typed event dispatch, and
// automatic reconnection with exponential backoff. Connection state changes
// are surfaced so the UI can show a visible "reconnecting" badge.

import type { TelemetryEvent } from "./types.js";

export type FeedState = "connecting" | "open" | "reconnecting" | "closed";

/** The few WebSocket members the feed touches, so tests can fake sockets. */
export interface SocketLike {
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: { code: number }) => void) | null;
  onerror: (() => void) | null;
  close(): void;
}

export interface FeedOptions {
  makeSocket?: (url: string) => SocketLike;
  backoffInitialMs?: number;
  backoffMaxMs?: number;
  log?: (message: string) => void;
}

type Handler = (event: TelemetryEvent) => void;

export class TelemetryFeed {
  state: FeedState = "closed";
  onState: (state: FeedState) => void = () => {};

  private readonly makeSocket: (url: string) => SocketLike;
  private readonly backoffInitialMs: number;
  private readonly backoffMaxMs: number;
  private readonly log: (message: string) => void;
  private readonly handlers = new Map<string, Handler[]>();
  private socket: SocketLike | null = null;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private attempts = 0;
  private stopped = true;

  constructor(
    private readonly urlFactory: () => string,
    options: FeedOptions = {},
  ) {
    this.makeSocket =
      options.makeSocket ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    this.backoffInitialMs = options.backoffInitialMs ?? 500;
    this.backoffMaxMs = options.backoffMaxMs ?? 8000;
    this.log = options.log ?? ((message) => console.debug(message));
  }

  on(type: string, handler: Handler): void {
    const list = this.handlers.get(type);
    if (list === undefined) {
      this.handlers.set(type, [handler]);
    } else {
      list.push(handler);
    }
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  close(): void {
    this.stopped = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    const socket = this.socket;
    this.socket = null;
    if (socket !== null) {
      socket.onclose = null;
      socket.close();
    }
    this.setState("closed");
  }

  /** Backoff delay before reconnect attempt `n` (1-based). */
  backoffDelay(attempt: number): number {
    return Math.min(this.backoffInitialMs * 2 ** (attempt - 1), this.backoffMaxMs);
  }

  private setState(state: FeedState): void {
    if (this.state !== state) {
      this.state = state;
      this.onState(state);
    }
  }

  private open(): void {
    this.setState(this.attempts === 0 ? "connecting" : "reconnecting");
    const socket = this.makeSocket(this.urlFactory());
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.setState("open");
    };
    socket.onmessage = (ev) => this.dispatch(ev.data);
    socket.onerror = () => {
      // The close event that follows drives reconnection.
    };
    socket.onclose = () => {
      this.socket = null;
      if (!this.stopped) {
        this.scheduleReconnect();
      }
    };
  }

  private scheduleReconnect(): void {
    this.attempts += 1;
    const delay = this.backoffDelay(this.attempts);
    this.setState("reconnecting");
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (!this.stopped) {
        this.open();
      }
    }, delay);
  }

  private dispatch(data: unknown): void {
    if (typeof data !== "string") {
      this.log("telemetry: ignoring non-text frame");
      return;
    }
    let event: TelemetryEvent;
    try {
      event = JSON.parse(data) as TelemetryEvent;
    } catch {
      this.log("telemetry: ignoring undecodable frame");
      return;
    }
    if (typeof event !== "object" || event === null || typeof event.type !== "string") {
      this.log("telemetry: ignoring event with no type");
      return;
    }
    const handlers = this.handlers.get(event.type);
    if (handlers === undefined) {
      // Unknown event types are ignored (with a log line), never fatal.
      this.log(`telemetry: ignoring unknown event type ${event.type}`);
      return;
    }
    for (const handler of handlers) {
      handler(event);
    }
  }
}
