// Camera stream handling: an incremental parser for the gateway's
// multipart/x-mixed-replace JPEG stream, staleness bookkeeping, and a thin
// fetch-driven pump that turns parts into callbacks.

export interface VideoFrame {
  seq: number;
  data: Uint8Array;
}

const CRLF_CRLF = new Uint8Array([13, 10, 13, 10]);
const MAX_HEADER_BYTES = 16 * 1024;
const MAX_BODY_BYTES = 32 * 1024 * 1024;

function findSeq(buf: Uint8Array, pattern: Uint8Array): number {
  outer: for (let i = 0; i + pattern.length <= buf.length; i++) {
    for (let j = 0; j < pattern.length; j++) {
      if (buf[i + j] !== pattern[j]) continue outer;
    }
    return i;
  }
  return -1;
}

function concat(a: Uint8Array, b: Uint8Array): Uint8Array {
  if (a.length === 0) return b;
  const out = new Uint8Array(a.length + b.length);
  out.set(a, 0);
  out.set(b, a.length);
  return out;
}

/**
 * Reassembles `--frame`-delimited JPEG parts from arbitrarily-chunked bytes.
 * Each part carries Content-Length (authoritative body size, so JPEG bytes
 * are never scanned for delimiters) and X-Frame-Seq.
 */
export class MultipartFrameParser {
  private buf: Uint8Array = new Uint8Array(0);
  private phase: "headers" | "body" = "headers";
  private bodyNeed = 0;
  private partSeq = -1;

  feed(chunk: Uint8Array): VideoFrame[] {
    this.buf = concat(this.buf, chunk);
    const frames: VideoFrame[] = [];
    for (;;) {
      if (this.phase === "headers") {
        const end = findSeq(this.buf, CRLF_CRLF);
        if (end < 0) {
          if (this.buf.length > MAX_HEADER_BYTES) {
            throw new Error("multipart header block too large");
          }
          break;
        }
        const block = new TextDecoder().decode(this.buf.subarray(0, end));
        this.buf = this.buf.subarray(end + CRLF_CRLF.length);
        const headers = parseHeaderBlock(block);
        const lengthText = headers.get("content-length");
        if (lengthText === undefined) {
          throw new Error("multipart part missing Content-Length");
        }
        const length = Number(lengthText);
        if (!Number.isInteger(length) || length < 0 || length > MAX_BODY_BYTES) {
          throw new Error(`bad Content-Length: ${lengthText}`);
        }
        this.bodyNeed = length;
        this.partSeq = Number(headers.get("x-frame-seq") ?? -1);
        this.phase = "body";
      } else {
        if (this.buf.length < this.bodyNeed) {
          break;
        }
        frames.push({ seq: this.partSeq, data: this.buf.slice(0, this.bodyNeed) });
        this.buf = this.buf.subarray(this.bodyNeed);
        this.phase = "headers";
      }
    }
    return frames;
  }
}

function parseHeaderBlock(block: string): Map<string, string> {
  // The block holds the boundary line plus header lines; a leading CRLF left
  // over from the previous part's body shows up as an empty first line.
  const headers = new Map<string, string>();
  for (const line of block.split("\r\n")) {
    if (line === "" || line.startsWith("--")) {
      continue;
    }
    const colon = line.indexOf(":");
    if (colon < 0) {
      continue;
    }
    headers.set(line.slice(0, colon).trim().toLowerCase(), line.slice(colon + 1).trim());
  }
  return headers;
}

export const STALE_AFTER_MS = 1000;

/** A view is stale when no frame has landed within the last second. */
export function isStale(lastFrameAt: number | null, now: number): boolean {
  return lastFrameAt === null || now - lastFrameAt > STALE_AFTER_MS;
}

export interface VideoFeedHandlers {
  onFrame: (frame: VideoFrame) => void;
  /** Stream refused (e.g. camera unknown, 404) — show a placeholder. */
  onUnavailable: (status: number) => void;
  /** Stream ended or errored after starting. */
  onEnded: () => void;
}

/** Pumps one camera's multipart stream into callbacks until close(). */
export class VideoFeed {
  private controller = new AbortController();
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly handlers: VideoFeedHandlers,
  ) {}

  async run(): Promise<void> {
    let response: Response;
    try {
      response = await fetch(this.url, { signal: this.controller.signal });
    } catch {
      if (!this.closed) this.handlers.onEnded();
      return;
    }
    if (!response.ok || response.body === null) {
      this.handlers.onUnavailable(response.status);
      return;
    }
    const reader = response.body.getReader();
    const parser = new MultipartFrameParser();
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        for (const frame of parser.feed(value)) {
          this.handlers.onFrame(frame);
        }
      }
    } catch {
      // fall through to onEnded
    }
    if (!this.closed) {
      this.handlers.onEnded();
    }
  }

  close(): void {
    this.closed = true;
    this.controller.abort();
  }
}
