/**
 * Connection state machine and telemetry buffering.
 *
 * All displayed state originates from telemetry frames; commands go out
 * fire-and-forget and are confirmed only when the simulation echoes them
 * back in telemetry.  Reconnects use exponential backoff and buffers
 * resume without duplicated timestamps (the ring buffer rejects stale t).
 */

import {
  CommandMessage,
  HelloFrame,
  Ranges,
  ServerFrame,
  TelemetryFrame,
  parseServerFrame,
  serializeCommand,
} from "./protocol.js";
import { RingBuffer } from "./ringbuffer.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export type SocketFactory = (url: string) => WebSocketLike;

export interface SessionOptions {
  windowSeconds?: number;
  capacity?: number;
  backoffMs?: number;
  maxBackoffMs?: number;
  now?: () => number;
  socketFactory?: SocketFactory;
  setTimer?: (fn: () => void, ms: number) => unknown;
}

interface PendingCommand {
  check: (frame: TelemetryFrame) => boolean;
  label: string;
}

export class TeleopSession {
  status: ConnectionStatus = "disconnected";
  ranges: Ranges | null = null;
  telemetryHz = 20;
  latest: TelemetryFrame | null = null;
  lastError: string | null = null;
  pending: string[] = [];
  framesReceived = 0;
  framesDropped = 0;
  reconnects = 0;

  readonly buffers: Record<string, RingBuffer[]>;
  readonly velocity: RingBuffer[];
  readonly commandLog: CommandMessage[] = [];

  private socket: WebSocketLike | null = null;
  private url = "";
  private closing = false;
  private backoff: number;
  private readonly opts: Required<
    Pick<SessionOptions, "windowSeconds" | "capacity" | "backoffMs" | "maxBackoffMs">
  >;
  private readonly now: () => number;
  private readonly socketFactory: SocketFactory;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private pendingCommands: PendingCommand[] = [];
  private listeners: (() => void)[] = [];
  /** Frames still being ingested when the next one lands get counted dropped. */
  private busy = false;

  constructor(options: SessionOptions = {}) {
    this.opts = {
      windowSeconds: options.windowSeconds ?? 10,
      capacity: options.capacity ?? 512,
      backoffMs: options.backoffMs ?? 500,
      maxBackoffMs: options.maxBackoffMs ?? 8000,
    };
    this.backoff = this.opts.backoffMs;
    this.now = options.now ?? (() => performance.now());
    this.socketFactory =
      options.socketFactory ?? ((url) => new WebSocket(url) as WebSocketLike);
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    const mk = () =>
      Array.from(
        { length: 4 },
        () => new RingBuffer(this.opts.capacity, this.opts.windowSeconds),
      );
    this.buffers = { r: mk(), theta: mk(), contact: mk() };
    this.velocity = Array.from(
      { length: 3 },
      () => new RingBuffer(this.opts.capacity, this.opts.windowSeconds),
    );
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  connect(url: string): void {
    this.url = url;
    this.closing = false;
    this.open();
  }

  private open(): void {
    this.status = "connecting";
    this.notify();
    let socket: WebSocketLike;
    try {
      socket = this.socketFactory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = socket;
    socket.onopen = () => {
      this.status = "connected";
      this.backoff = this.opts.backoffMs;
      this.lastError = null;
      this.notify();
    };
    socket.onmessage = (ev) => this.ingest(ev.data);
    socket.onclose = () => {
      this.status = "disconnected";
      this.notify();
      this.scheduleReconnect();
    };
    socket.onerror = () => {
      this.lastError = "socket error";
    };
  }

  private scheduleReconnect(): void {
    if (this.closing) return;
    this.reconnects += 1;
    this.setTimer(() => {
      if (!this.closing) this.open();
    }, this.backoff);
    this.backoff = Math.min(this.backoff * 2, this.opts.maxBackoffMs);
  }

  disconnect(): void {
    this.closing = true;
    this.socket?.close();
    this.socket = null;
    this.status = "disconnected";
    this.notify();
  }

  ingest(text: string): void {
    let frame: ServerFrame;
    try {
      frame = parseServerFrame(text);
    } catch (err) {
      this.lastError = String(err);
      return;
    }
    if (frame.type === "hello") {
      this.ranges = (frame as HelloFrame).ranges;
      this.telemetryHz = (frame as HelloFrame).telemetry_hz;
      this.notify();
      return;
    }
    if (frame.type === "error") {
      this.lastError = frame.message;
      this.notify();
      return;
    }
    if (this.busy) {
      this.framesDropped += 1;
      return;
    }
    this.busy = true;
    try {
      this.framesReceived += 1;
      this.latest = frame;
      for (let leg = 0; leg < 4; leg++) {
        this.buffers.r[leg].push(frame.t, frame.r[leg]);
        this.buffers.theta[leg].push(frame.t, frame.theta[leg]);
        this.buffers.contact[leg].push(frame.t, frame.contacts[leg]);
      }
      for (let k = 0; k < 3; k++) {
        this.velocity[k].push(frame.t, frame.v_body[k]);
      }
      this.resolvePending(frame);
      this.notify();
    } finally {
      this.busy = false;
    }
  }

  /** Data older than a second dims the views. */
  isStale(): boolean {
    return this.latest === null || this.status !== "connected";
  }

  send(msg: CommandMessage): boolean {
    if (this.status !== "connected" || !this.socket) return false;
    const text = serializeCommand(msg, this.ranges);
    this.socket.send(text);
    this.commandLog.push(JSON.parse(text) as CommandMessage);
    this.trackPending(JSON.parse(text) as CommandMessage);
    this.notify();
    return true;
  }

  private trackPending(msg: CommandMessage): void {
    const close = (a: number, b: number) => Math.abs(a - b) < 1e-6;
    if (msg.type === "set_shape") {
      const { h, g_c } = msg;
      this.pendingCommands.push({
        label: "set_shape",
        check: (f) =>
          (h === undefined || close(f.shape.h, h)) &&
          (g_c === undefined || close(f.shape.g_c, g_c)),
      });
    } else if (msg.type === "set_command") {
      const { vx, vy, yaw_rate } = msg;
      this.pendingCommands.push({
        label: "set_command",
        check: (f) =>
          (vx === undefined || close(f.cmd.vx, vx)) &&
          (vy === undefined || close(f.cmd.vy, vy)) &&
          (yaw_rate === undefined || close(f.cmd.yaw_rate, yaw_rate)),
      });
    } else if (msg.type === "add_mass") {
      const kg = msg.kg;
      this.pendingCommands.push({
        label: "add_mass",
        check: (f) => close(f.payload, Math.max(kg, 0)),
      });
    }
    this.pending = this.pendingCommands.map((p) => p.label);
  }

  private resolvePending(frame: TelemetryFrame): void {
    this.pendingCommands = this.pendingCommands.filter((p) => !p.check(frame));
    this.pending = this.pendingCommands.map((p) => p.label);
  }

  dropRate(): number {
    const total = this.framesReceived + this.framesDropped;
    return total === 0 ? 0 : this.framesDropped / total;
  }
}
