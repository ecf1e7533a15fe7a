/**
 * Stream console client: one WebSocket, one live session, live steering.
 *
 * The engine denoises a chunk only once every driving sample in the chunk's
 * window has arrived, so the console feeds it a continuous signal: a ticker
 * running at the stream's frame rate sends one {"type":"drive"} per tick with
 * strictly sequential indices, carrying whatever the slider (or the scripted
 * playback queue) says at that moment. Holding the slider therefore steers
 * the very next chunk — live steering, not passive viewing.
 *
 * Connection loss is surfaced immediately and retried with exponential
 * backoff. A reconnect restores the socket only; the server keeps no session
 * across connections, so streaming state is dropped and the user starts anew.
 *
 * The WebSocket constructor and the clock are injectable so every behavior
 * here is testable against fakes; the browser app passes the real ones.
 */

import {
  driveMsg,
  extractStatsRaw,
  parseServerMessage,
  startMsg,
  stopMsg,
  type FrameMsg,
  type StatsMsg,
  type StatsRawFields,
} from "./protocol.js";
import { FrameRing } from "./ring.js";

export interface WsLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type WsFactory = (url: string) => WsLike;

export interface Timers {
  set(fn: () => void, ms: number): unknown;
  clear(handle: unknown): void;
  now(): number;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (h) => clearTimeout(h as Parameters<typeof clearTimeout>[0]),
  now: () => Date.now(),
};

export type Status =
  | "idle"
  | "connecting"
  | "open"
  | "streaming"
  | "reconnecting"
  | "closed";

export interface StatsSnapshot {
  msg: StatsMsg;
  raw: string;
  fields: StatsRawFields;
}

export interface ClientOptions {
  url: string;
  wsFactory?: WsFactory;
  timers?: Timers;
  ringCapacity?: number;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
}

export class ConsoleClient {
  readonly ring: FrameRing;
  stats: StatsSnapshot | null = null;
  lastError: string | null = null;

  onFrame: ((frame: FrameMsg) => void) | null = null;
  onStats: ((stats: StatsSnapshot) => void) | null = null;
  onError: ((message: string) => void) | null = null;
  onStatus: ((status: Status) => void) | null = null;

  private readonly url: string;
  private readonly wsFactory: WsFactory;
  private readonly timers: Timers;
  private readonly backoffBaseMs: number;
  private readonly backoffMaxMs: number;

  private ws: WsLike | null = null;
  private statusValue: Status = "idle";
  private wantOpen = false;
  private retries = 0;
  private retryHandle: unknown = null;

  private tickHandle: unknown = null;
  private tickMs = 40;
  private cursor = 0;
  private sliderValue = 0;
  private script: number[] = [];

  constructor(opts: ClientOptions) {
    this.url = opts.url;
    this.wsFactory = opts.wsFactory ?? ((url) => new WebSocket(url) as unknown as WsLike);
    this.timers = opts.timers ?? realTimers;
    this.ring = new FrameRing(opts.ringCapacity ?? 500);
    this.backoffBaseMs = opts.backoffBaseMs ?? 250;
    this.backoffMaxMs = opts.backoffMaxMs ?? 4000;
  }

  get status(): Status {
    return this.statusValue;
  }

  get streaming(): boolean {
    return this.statusValue === "streaming";
  }

  get slider(): number {
    return this.sliderValue;
  }

  get driveCursor(): number {
    return this.cursor;
  }

  connect(): void {
    if (this.wantOpen) return;
    this.wantOpen = true;
    this.retries = 0;
    this.dial();
  }

  /** Tear everything down; no reconnect. */
  close(): void {
    this.wantOpen = false;
    this.stopTicker();
    if (this.retryHandle !== null) {
      this.timers.clear(this.retryHandle);
      this.retryHandle = null;
    }
    const ws = this.ws;
    this.ws = null;
    if (ws) {
      ws.onclose = null;
      ws.onerror = null;
      ws.onmessage = null;
      ws.onopen = null;
      try {
        ws.close();
      } catch {
        /* already gone */
      }
    }
    this.setStatus("closed");
  }

  start(seed: number, identity: number[], fps = 25): void {
    if (this.statusValue !== "open") {
      throw new Error(`cannot start while ${this.statusValue}`);
    }
    this.ws!.send(startMsg(seed, identity, fps));
    this.cursor = 0;
    this.tickMs = 1000 / fps;
    this.setStatus("streaming");
    this.startTicker();
  }

  /** Politely end the stream; the server closes the connection after stop. */
  stop(): void {
    if (this.statusValue !== "streaming") return;
    this.stopTicker();
    try {
      this.ws?.send(stopMsg());
    } catch {
      /* socket already dying; close handler takes over */
    }
    this.wantOpen = false; // the post-stop close is expected, not a drop
    this.setStatus("open");
  }

  setSlider(value: number): void {
    if (!Number.isFinite(value)) throw new Error("slider value must be finite");
    this.sliderValue = value;
  }

  /**
   * Queue values for scripted playback: the next ticks consume one value each
   * (reproducible demos), then fall back to the live slider.
   */
  playScript(values: number[]): void {
    if (!values.every((v) => Number.isFinite(v))) {
      throw new Error("script values must be finite");
    }
    this.script.push(...values);
  }

  get scriptRemaining(): number {
    return this.script.length;
  }

  // -- internals -------------------------------------------------------------

  private setStatus(status: Status): void {
    if (status === this.statusValue) return;
    this.statusValue = status;
    this.onStatus?.(status);
  }

  private fail(message: string): void {
    this.lastError = message;
    this.onError?.(message);
  }

  private dial(): void {
    this.setStatus(this.retries ? "reconnecting" : "connecting");
    let ws: WsLike;
    try {
      ws = this.wsFactory(this.url);
    } catch (exc) {
      this.fail(`connect failed: ${String(exc)}`);
      this.scheduleRetry();
      return;
    }
    this.ws = ws;
    ws.onopen = () => {
      this.retries = 0;
      this.setStatus("open");
    };
    ws.onmessage = (ev) => {
      const text = typeof ev.data === "string" ? ev.data : String(ev.data);
      this.handleMessage(text);
    };
    ws.onerror = () => {
      // The close event carries the actionable signal; just note it.
      if (this.statusValue === "connecting" || this.statusValue === "reconnecting") {
        this.fail("connection error");
      }
    };
    ws.onclose = () => {
      if (this.ws !== ws) return; // superseded socket
      this.ws = null;
      const wasStreaming = this.statusValue === "streaming";
      this.stopTicker();
      if (!this.wantOpen) {
        this.setStatus("closed");
        return;
      }
      if (wasStreaming) this.fail("connection lost mid-stream; session dropped");
      this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    if (!this.wantOpen || this.retryHandle !== null) return;
    const delay = Math.min(this.backoffBaseMs * 2 ** this.retries, this.backoffMaxMs);
    this.retries += 1;
    this.setStatus("reconnecting");
    this.retryHandle = this.timers.set(() => {
      this.retryHandle = null;
      if (this.wantOpen) this.dial();
    }, delay);
  }

  private startTicker(): void {
    this.stopTicker();
    const tick = () => {
      if (this.statusValue !== "streaming" || !this.ws) return;
      const value = this.script.length ? this.script.shift()! : this.sliderValue;
      try {
        this.ws.send(driveMsg(this.cursor, value));
        this.cursor += 1;
      } catch {
        /* close handler deals with the drop */
      }
      this.tickHandle = this.timers.set(tick, this.tickMs);
    };
    this.tickHandle = this.timers.set(tick, this.tickMs);
  }

  private stopTicker(): void {
    if (this.tickHandle !== null) {
      this.timers.clear(this.tickHandle);
      this.tickHandle = null;
    }
  }

  private handleMessage(text: string): void {
    let msg;
    try {
      msg = parseServerMessage(text);
    } catch (exc) {
      this.fail(String(exc instanceof Error ? exc.message : exc));
      return;
    }
    if (msg.type === "frame") {
      this.ring.push(msg);
      this.onFrame?.(msg);
    } else if (msg.type === "stats") {
      const snapshot = { msg, raw: text, fields: extractStatsRaw(text) };
      this.stats = snapshot;
      this.onStats?.(snapshot);
    } else {
      this.fail(msg.message);
    }
  }
}
