import { describe, expect, it } from "vitest";

import {
  CYCLE_KEYS,
  driveMsg,
  extractStatsRaw,
  parseServerMessage,
  startMsg,
  stopMsg,
} from "../src/protocol.js";

const FRAME = '{"type": "frame", "index": 3, "mouth": -0.25, "state": [1.0, 2.0, 3.0], "chunk": 0}';
const STATS =
  '{"type": "stats", "startup_ms": 281.6949547589999, "fps": 31.957990867579908, ' +
  '"cycle": {"signal_ms": 0.012, "denoise_ms": 190.5, "decode_ms": 1e-07, ' +
  '"motion_encode_ms": -0.0, "misc_ms": 2.25}}';

describe("parseServerMessage", () => {
  it("parses frame messages", () => {
    const msg = parseServerMessage(FRAME);
    expect(msg).toEqual({ type: "frame", index: 3, mouth: -0.25, state: [1, 2, 3], chunk: 0 });
  });

  it("parses stats messages with exactly the five cycle keys", () => {
    const msg = parseServerMessage(STATS);
    if (msg.type !== "stats") throw new Error("expected stats");
    expect(Object.keys(msg.cycle).sort()).toEqual([...CYCLE_KEYS].sort());
    expect(msg.fps).toBeCloseTo(31.9579, 3);
  });

  it("parses error messages", () => {
    expect(parseServerMessage('{"type":"error","message":"nope"}')).toEqual({
      type: "error",
      message: "nope",
    });
  });

  it.each([
    ["not json", "{{{"],
    ["unknown type", '{"type":"nonsense"}'],
    ["missing frame fields", '{"type":"frame","index":0}'],
    ["negative index", '{"type":"frame","index":-1,"mouth":0,"state":[0],"chunk":0}'],
    ["non-finite state", '{"type":"frame","index":0,"mouth":0,"state":[null],"chunk":0}'],
    ["missing cycle key", '{"type":"stats","startup_ms":1,"fps":2,"cycle":{"signal_ms":1}}'],
    [
      "extra cycle key",
      '{"type":"stats","startup_ms":1,"fps":2,"cycle":{"signal_ms":1,"denoise_ms":1,' +
        '"decode_ms":1,"motion_encode_ms":1,"misc_ms":1,"bonus_ms":1}}',
    ],
    ["non-string error", '{"type":"error","message":7}'],
    ["array payload", "[1,2,3]"],
  ])("rejects %s", (_label, raw) => {
    expect(() => parseServerMessage(raw)).toThrow();
  });
});

describe("extractStatsRaw", () => {
  it("returns the exact byte spans of every numeric field", () => {
    const fields = extractStatsRaw(STATS);
    expect(fields.startup_ms).toBe("281.6949547589999");
    expect(fields.fps).toBe("31.957990867579908");
    expect(fields.cycle.signal_ms).toBe("0.012");
    expect(fields.cycle.denoise_ms).toBe("190.5");
    expect(fields.cycle.decode_ms).toBe("1e-07");
    expect(fields.cycle.motion_encode_ms).toBe("-0.0");
    expect(fields.cycle.misc_ms).toBe("2.25");
  });

  it("preserves formatting JSON round-trips would destroy", () => {
    // "1e-07" reparses to the same double but re-serializes as "1e-7";
    // "-0.0" re-serializes as "0". Byte equality needs the original spans.
    const fields = extractStatsRaw(STATS);
    expect(JSON.stringify(JSON.parse(fields.cycle.decode_ms))).not.toBe(
      fields.cycle.decode_ms,
    );
    expect(JSON.stringify(JSON.parse(fields.cycle.motion_encode_ms))).not.toBe(
      fields.cycle.motion_encode_ms,
    );
  });

  it("throws when a field is missing", () => {
    expect(() => extractStatsRaw('{"type":"stats","fps":1}')).toThrow(/has no/);
  });
});

describe("client message builders", () => {
  it("builds the start message", () => {
    expect(JSON.parse(startMsg(42, [1, 0], 25))).toEqual({
      type: "start",
      seed: 42,
      identity: [1, 0],
      fps: 25,
    });
  });

  it("rejects bad start arguments", () => {
    expect(() => startMsg(-1, [1], 25)).toThrow(/seed/);
    expect(() => startMsg(1, [], 25)).toThrow(/identity/);
    expect(() => startMsg(1, [Number.NaN], 25)).toThrow(/identity/);
    expect(() => startMsg(1, [1], 0)).toThrow(/fps/);
  });

  it("builds drive and stop messages", () => {
    expect(JSON.parse(driveMsg(7, -0.5))).toEqual({ type: "drive", index: 7, value: -0.5 });
    expect(JSON.parse(stopMsg())).toEqual({ type: "stop" });
  });
});
