/**
 * Typed wire protocol for the talking-dot stream server.
 *
 * JSON text frames both ways:
 *
 *   client -> server  {"type":"start","seed":u64,"identity":[...],"fps":25}
 *                     {"type":"drive","index":n,"value":f}
 *                     {"type":"stop"}
 *   server -> client  {"type":"frame","index":n,"mouth":f,"state":[...],"chunk":c}
 *                     {"type":"stats","startup_ms":f,"fps":f,"cycle":{...5 keys}}
 *                     {"type":"error","message":s}
 *
 * The stats panel must show server numbers byte-for-byte, so alongside the
 * parsed message we extract the raw text span of every numeric field straight
 * from the incoming bytes; the panel renders those spans verbatim and never
 * re-serializes a float.
 */

export const WS_PATH = "/ws";

export const CYCLE_KEYS = [
  "signal_ms",
  "denoise_ms",
  "decode_ms",
  "motion_encode_ms",
  "misc_ms",
] as const;
export type CycleKey = (typeof CYCLE_KEYS)[number];

export interface StartMsg {
  type: "start";
  seed: number;
  identity: number[];
  fps: number;
}
export interface DriveMsg {
  type: "drive";
  index: number;
  value: number;
}
export interface StopMsg {
  type: "stop";
}
export type ClientMsg = StartMsg | DriveMsg | StopMsg;

export interface FrameMsg {
  type: "frame";
  index: number;
  mouth: number;
  state: number[];
  chunk: number;
}
export interface StatsMsg {
  type: "stats";
  startup_ms: number;
  fps: number;
  cycle: Record<CycleKey, number>;
}
export interface ErrorMsg {
  type: "error";
  message: string;
}
export type ServerMsg = FrameMsg | StatsMsg | ErrorMsg;

function isNum(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function asRecord(x: unknown, what: string): Record<string, unknown> {
  if (typeof x !== "object" || x === null || Array.isArray(x)) {
    throw new Error(`${what} is not a JSON object`);
  }
  return x as Record<string, unknown>;
}

/** Parse and validate one server message; throws on anything off-protocol. */
export function parseServerMessage(raw: string): ServerMsg {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new Error("server message is not valid JSON");
  }
  const obj = asRecord(data, "server message");
  const type = obj.type;
  if (type === "frame") {
    const { index, mouth, state, chunk } = obj;
    if (!isNum(index) || index < 0 || !Number.isInteger(index)) {
      throw new Error("frame.index must be a non-negative integer");
    }
    if (!isNum(mouth)) throw new Error("frame.mouth must be a finite number");
    if (!isNum(chunk) || !Number.isInteger(chunk)) {
      throw new Error("frame.chunk must be an integer");
    }
    if (!Array.isArray(state) || state.length === 0 || !state.every(isNum)) {
      throw new Error("frame.state must be a non-empty array of finite numbers");
    }
    return { type, index, mouth, state: state as number[], chunk };
  }
  if (type === "stats") {
    const { startup_ms, fps } = obj;
    if (!isNum(startup_ms)) throw new Error("stats.startup_ms must be a finite number");
    if (!isNum(fps)) throw new Error("stats.fps must be a finite number");
    const cycleObj = asRecord(obj.cycle, "stats.cycle");
    const cycle = {} as Record<CycleKey, number>;
    for (const key of CYCLE_KEYS) {
      const v = cycleObj[key];
      if (!isNum(v)) throw new Error(`stats.cycle.${key} must be a finite number`);
      cycle[key] = v;
    }
    const extra = Object.keys(cycleObj).filter(
      (k) => !(CYCLE_KEYS as readonly string[]).includes(k),
    );
    if (extra.length) throw new Error(`stats.cycle has unknown keys: ${extra.join(", ")}`);
    return { type, startup_ms, fps, cycle };
  }
  if (type === "error") {
    const { message } = obj;
    if (typeof message !== "string") throw new Error("error.message must be a string");
    return { type, message };
  }
  throw new Error(`unknown server message type: ${JSON.stringify(type)}`);
}

export interface StatsRawFields {
  startup_ms: string;
  fps: string;
  cycle: Record<CycleKey, string>;
}

const NUMBER_CHARS = /[0-9eE+\-.]/;

/** Exact byte span of the JSON number following `"key":` in `raw`. */
function rawNumberAfterKey(raw: string, key: string): string {
  const quoted = `"${key}"`;
  const at = raw.indexOf(quoted);
  if (at < 0) throw new Error(`stats message has no "${key}" field`);
  let i = at + quoted.length;
  while (i < raw.length && /\s/.test(raw[i])) i += 1;
  if (raw[i] !== ":") throw new Error(`"${key}" is not followed by a value`);
  i += 1;
  while (i < raw.length && /\s/.test(raw[i])) i += 1;
  const start = i;
  while (i < raw.length && NUMBER_CHARS.test(raw[i])) i += 1;
  if (i === start) throw new Error(`"${key}" value is not a JSON number`);
  return raw.slice(start, i);
}

/**
 * Pull the verbatim text of every stats field out of the raw message. Works
 * because the protocol's field names each occur exactly once per message.
 */
export function extractStatsRaw(raw: string): StatsRawFields {
  const cycle = {} as Record<CycleKey, string>;
  for (const key of CYCLE_KEYS) cycle[key] = rawNumberAfterKey(raw, key);
  return {
    startup_ms: rawNumberAfterKey(raw, "startup_ms"),
    fps: rawNumberAfterKey(raw, "fps"),
    cycle,
  };
}

export function startMsg(seed: number, identity: number[], fps: number): string {
  if (!Number.isInteger(seed) || seed < 0) throw new Error("seed must be a non-negative integer");
  if (!identity.length || !identity.every(isNum)) {
    throw new Error("identity must be a non-empty array of finite numbers");
  }
  if (!isNum(fps) || fps <= 0) throw new Error("fps must be a positive number");
  return JSON.stringify({ type: "start", seed, identity, fps });
}

export function driveMsg(index: number, value: number): string {
  return JSON.stringify({ type: "drive", index, value });
}

export function stopMsg(): string {
  return JSON.stringify({ type: "stop" });
}
