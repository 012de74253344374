/** Fixed-capacity time-series ring buffer holding the last N seconds. */

export class RingBuffer {
  private times: Float64Array;
  private values: Float64Array;
  private head = 0;
  private count = 0;

  constructor(
    readonly capacity: number,
    readonly windowSeconds: number,
  ) {
    this.times = new Float64Array(capacity);
    this.values = new Float64Array(capacity);
  }

  get length(): number {
    return this.count;
  }

  lastTime(): number | null {
    if (this.count === 0) return null;
    const idx = (this.head + this.count - 1) % this.capacity;
    return this.times[idx];
  }

  /** Append a sample; duplicate or backwards timestamps are dropped. */
  push(t: number, v: number): boolean {
    const last = this.lastTime();
    if (last !== null && t <= last) return false;
    const idx = (this.head + this.count) % this.capacity;
    this.times[idx] = t;
    this.values[idx] = v;
    if (this.count < this.capacity) {
      this.count += 1;
    } else {
      this.head = (this.head + 1) % this.capacity;
    }
    this.evictOld(t);
    return true;
  }

  private evictOld(now: number): void {
    while (this.count > 0 && this.times[this.head] < now - this.windowSeconds) {
      this.head = (this.head + 1) % this.capacity;
      this.count -= 1;
    }
  }

  /** Snapshot as parallel arrays ordered oldest to newest. */
  snapshot(): { t: number[]; v: number[] } {
    const t: number[] = new Array(this.count);
    const v: number[] = new Array(this.count);
    for (let i = 0; i < this.count; i++) {
      const idx = (this.head + i) % this.capacity;
      t[i] = this.times[idx];
      v[i] = this.values[idx];
    }
    return { t, v };
  }

  clear(): void {
    this.head = 0;
    this.count = 0;
  }
}
