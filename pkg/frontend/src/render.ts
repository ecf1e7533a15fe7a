/**
 * Pure plotting helpers: ring buffer in, point lists and panel rows out.
 *
 * Everything displayed as a number passes through untouched — these functions
 * only compute where to draw. That keeps the whole render path testable
 * without a canvas and guarantees the stats panel shows server bytes.
 */

import type { StatsRawFields } from "./protocol.js";
import { CYCLE_KEYS } from "./protocol.js";
import type { RingFrame } from "./ring.js";

export interface Pt {
  x: number;
  y: number;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/**
 * Map the most recent `span` frame indices onto [0, width); mouth values are
 * clamped to [lo, hi] and drawn top-down. Frames keep their index spacing, so
 * the trace scrolls left as new frames arrive.
 */
export function mouthPolyline(
  frames: RingFrame[],
  width: number,
  height: number,
  span = 250,
  lo = -2,
  hi = 2,
): Pt[] {
  if (!frames.length) return [];
  const latest = frames[frames.length - 1].index;
  const first = latest - span + 1;
  const out: Pt[] = [];
  for (const f of frames) {
    if (f.index < first) continue;
    const x = ((f.index - first) / (span - 1)) * (width - 1);
    const y = (1 - (clamp(f.mouth, lo, hi) - lo) / (hi - lo)) * (height - 1);
    out.push({ x, y });
  }
  return out;
}

/** Dot position from the 2-D state projection, clamped into the canvas. */
export function dotPosition(
  frame: RingFrame,
  width: number,
  height: number,
  scale = 3,
): Pt {
  return {
    x: clamp(width / 2 + (frame.x / scale) * (width / 2), 0, width - 1),
    y: clamp(height / 2 - (frame.y / scale) * (height / 2), 0, height - 1),
  };
}

/**
 * Sync gauge: Pearson correlation between the recent drive values and the
 * mouth channel at the same frame indices. Purely a visualization aid —
 * 0 when either side is degenerate.
 */
export function syncGauge(mouth: number[], drive: number[]): number {
  const n = Math.min(mouth.length, drive.length);
  if (n < 2) return 0;
  const m = mouth.slice(-n);
  const d = drive.slice(-n);
  const mean = (xs: number[]) => xs.reduce((a, b) => a + b, 0) / xs.length;
  const mm = mean(m);
  const dm = mean(d);
  let num = 0;
  let mv = 0;
  let dv = 0;
  for (let i = 0; i < n; i += 1) {
    num += (m[i] - mm) * (d[i] - dm);
    mv += (m[i] - mm) ** 2;
    dv += (d[i] - dm) ** 2;
  }
  if (mv === 0 || dv === 0) return 0;
  return clamp(num / Math.sqrt(mv * dv), -1, 1);
}

/**
 * Stats panel rows, in display order. Values are the raw byte spans of the
 * server's message — not re-serialized floats.
 */
export function statsRows(fields: StatsRawFields): Array<[string, string]> {
  const rows: Array<[string, string]> = [
    ["startup_ms", fields.startup_ms],
    ["fps", fields.fps],
  ];
  for (const key of CYCLE_KEYS) rows.push([`cycle.${key}`, fields.cycle[key]]);
  return rows;
}
