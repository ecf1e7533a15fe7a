import { describe, expect, it } from "vitest";

import { dotPosition, mouthPolyline, statsRows, syncGauge } from "../src/render.js";
import type { RingFrame } from "../src/ring.js";

function rf(index: number, mouth: number, x = 0, y = 0): RingFrame {
  return { index, mouth, x, y, chunk: 0 };
}

describe("mouthPolyline", () => {
  it("maps frame indices left-to-right and mouth values top-down", () => {
    const frames = [rf(0, -2), rf(1, 0), rf(2, 2)];
    const pts = mouthPolyline(frames, 300, 100, 3);
    expect(pts.length).toBe(3);
    expect(pts[0].x).toBe(0);
    expect(pts[2].x).toBe(299);
    expect(pts[0].y).toBe(99); // mouth at the low clamp draws at the bottom
    expect(pts[2].y).toBe(0); // mouth at the high clamp draws at the top
    expect(pts[1].y).toBeCloseTo(49.5, 6);
  });

  it("shows only the trailing span", () => {
    const frames = Array.from({ length: 50 }, (_, i) => rf(i, 0));
    const pts = mouthPolyline(frames, 100, 50, 10);
    expect(pts.length).toBe(10);
  });

  it("clamps out-of-range mouth values instead of leaving the canvas", () => {
    const pts = mouthPolyline([rf(0, -99), rf(1, 99)], 100, 50, 2);
    expect(pts[0].y).toBe(49);
    expect(pts[1].y).toBe(0);
  });

  it("handles an empty ring", () => {
    expect(mouthPolyline([], 100, 50)).toEqual([]);
  });
});

describe("dotPosition", () => {
  it("centers the origin and clamps to the canvas", () => {
    expect(dotPosition(rf(0, 0, 0, 0), 200, 200)).toEqual({ x: 100, y: 100 });
    const p = dotPosition(rf(0, 0, 999, -999), 200, 200);
    expect(p).toEqual({ x: 199, y: 199 });
  });
});

describe("syncGauge", () => {
  it("is 1 for perfectly correlated traces and -1 for inverted ones", () => {
    const drive = [0, 1, 0, 1, 0, 1];
    expect(syncGauge(drive, drive)).toBeCloseTo(1, 12);
    expect(syncGauge(drive.map((v) => -v), drive)).toBeCloseTo(-1, 12);
  });

  it("is 0 for degenerate inputs", () => {
    expect(syncGauge([], [])).toBe(0);
    expect(syncGauge([1], [1])).toBe(0);
    expect(syncGauge([1, 1, 1], [0, 1, 0])).toBe(0);
  });

  it("uses only the overlapping tail of unequal-length traces", () => {
    const mouth = [9, 9, 9, 0, 1, 0];
    const drive = [0, 1, 0];
    expect(syncGauge(mouth, drive)).toBeCloseTo(1, 12);
  });
});

describe("statsRows", () => {
  it("lists startup, fps, then the cycle keys, passing raw spans through", () => {
    const rows = statsRows({
      startup_ms: "280.5",
      fps: "31.957990867579908",
      cycle: {
        signal_ms: "0.1",
        denoise_ms: "8.0",
        decode_ms: "1e-07",
        motion_encode_ms: "-0.0",
        misc_ms: "0.0",
      },
    });
    expect(rows.map(([label]) => label)).toEqual([
      "startup_ms",
      "fps",
      "cycle.signal_ms",
      "cycle.denoise_ms",
      "cycle.decode_ms",
      "cycle.motion_encode_ms",
      "cycle.misc_ms",
    ]);
    expect(rows[1][1]).toBe("31.957990867579908");
    expect(rows[4][1]).toBe("1e-07");
  });
});
