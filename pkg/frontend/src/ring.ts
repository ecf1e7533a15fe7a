/**
 * Bounded ring buffer of rendered frames — the UI's only mutable store.
 *
 * Keeps the last `capacity` frames as (index, mouth, 2-D projection, chunk).
 * Frame indices must arrive strictly increasing: the UI never reorders, so an
 * out-of-order push is a protocol violation and throws rather than papering
 * over it.
 */

import type { FrameMsg } from "./protocol.js";

export interface RingFrame {
  index: number;
  mouth: number;
  x: number;
  y: number;
  chunk: number;
}

export class FrameRing {
  readonly capacity: number;
  private buf: RingFrame[];
  private head = 0; // next write slot
  private count = 0;
  private pushed = 0;
  private lastIndex = -1;

  constructor(capacity = 500) {
    if (!Number.isInteger(capacity) || capacity <= 0) {
      throw new Error("ring capacity must be a positive integer");
    }
    this.capacity = capacity;
    this.buf = new Array<RingFrame>(capacity);
  }

  /** Total frames ever pushed (not just the ones still buffered). */
  get total(): number {
    return this.pushed;
  }

  get length(): number {
    return this.count;
  }

  get latestIndex(): number {
    return this.lastIndex;
  }

  push(frame: FrameMsg): void {
    if (frame.index <= this.lastIndex) {
      throw new Error(
        `frame index ${frame.index} arrived after ${this.lastIndex}; stream must be in order`,
      );
    }
    this.lastIndex = frame.index;
    // Project the state onto its first two coordinates for the dot plot;
    // mouth is carried as its own channel.
    this.buf[this.head] = {
      index: frame.index,
      mouth: frame.mouth,
      x: frame.state[0],
      y: frame.state.length > 1 ? frame.state[1] : 0,
      chunk: frame.chunk,
    };
    this.head = (this.head + 1) % this.capacity;
    if (this.count < this.capacity) this.count += 1;
    this.pushed += 1;
  }

  /** The most recent `n` frames, oldest first. */
  last(n: number): RingFrame[] {
    const take = Math.max(0, Math.min(n, this.count));
    const out: RingFrame[] = new Array(take);
    for (let k = 0; k < take; k += 1) {
      const pos = (this.head - take + k + this.capacity * 2) % this.capacity;
      out[k] = this.buf[pos];
    }
    return out;
  }

  toArray(): RingFrame[] {
    return this.last(this.count);
  }

  latest(): RingFrame | undefined {
    return this.count ? this.last(1)[0] : undefined;
  }
}
