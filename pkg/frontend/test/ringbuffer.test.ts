import { describe, expect, it } from "vitest";

import { RingBuffer } from "../src/ringbuffer.js";

describe("RingBuffer", () => {
  it("keeps samples ordered and within the window", () => {
    const buf = new RingBuffer(100, 10);
    for (let i = 0; i < 50; i++) buf.push(i * 0.5, i);
    const { t } = buf.snapshot();
    expect(t[0]).toBeGreaterThanOrEqual(t[t.length - 1] - 10);
    for (let i = 1; i < t.length; i++) expect(t[i]).toBeGreaterThan(t[i - 1]);
  });

  it("rejects duplicate and backwards timestamps", () => {
    const buf = new RingBuffer(16, 100);
    expect(buf.push(1.0, 5)).toBe(true);
    expect(buf.push(1.0, 6)).toBe(false);
    expect(buf.push(0.5, 7)).toBe(false);
    expect(buf.push(1.5, 8)).toBe(true);
    expect(buf.length).toBe(2);
  });

  it("wraps at capacity without losing order", () => {
    const buf = new RingBuffer(8, 1000);
    for (let i = 0; i < 20; i++) buf.push(i, i * i);
    expect(buf.length).toBe(8);
    const { t, v } = buf.snapshot();
    expect(t).toEqual([12, 13, 14, 15, 16, 17, 18, 19]);
    expect(v[0]).toBe(144);
  });

  it("clears", () => {
    const buf = new RingBuffer(8, 10);
    buf.push(1, 1);
    buf.clear();
    expect(buf.length).toBe(0);
    expect(buf.lastTime()).toBeNull();
  });
});
