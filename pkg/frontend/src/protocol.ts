/**
 * Wire protocol types for the teleoperation link: JSON payloads over
 * WebSocket text frames, mirroring the backend schema exactly.
 */

export interface Ranges {
  vx: [number, number];
  vy: [number, number];
  yaw_rate: [number, number];
  h: [number, number];
  g_c: [number, number];
}

export interface HelloFrame {
  type: "hello";
  ranges: Ranges;
  telemetry_hz: number;
}

export interface TelemetryFrame {
  type: "telemetry";
  t: number;
  paused: boolean;
  pos: [number, number, number];
  rpy: [number, number, number];
  v_body: [number, number, number];
  omega: [number, number, number];
  contacts: [number, number, number, number];
  r: [number, number, number, number];
  theta: [number, number, number, number];
  phi: [number, number, number, number];
  foot_xz: [number, number][];
  reward: number;
  cmd: { vx: number; vy: number; yaw_rate: number };
  shape: { h: number; g_c: number };
  payload: number;
}

export interface ErrorFrame {
  type: "error";
  message: string;
}

export type ServerFrame = HelloFrame | TelemetryFrame | ErrorFrame;

export type CommandMessage =
  | { type: "set_command"; vx?: number; vy?: number; yaw_rate?: number }
  | { type: "set_shape"; h?: number; g_c?: number }
  | { type: "add_mass"; kg: number }
  | { type: "push"; dir: [number, number]; mag: number }
  | { type: "pause" }
  | { type: "reset" };

export const LEG_NAMES = ["FL", "FR", "HL", "HR"] as const;

export function parseServerFrame(text: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new Error("frame is not valid JSON");
  }
  if (typeof raw !== "object" || raw === null || !("type" in raw)) {
    throw new Error("frame missing 'type'");
  }
  const frame = raw as ServerFrame;
  if (frame.type === "telemetry") {
    if (
      typeof frame.t !== "number" ||
      !Array.isArray(frame.r) ||
      frame.r.length !== 4 ||
      !Array.isArray(frame.contacts) ||
      frame.contacts.length !== 4
    ) {
      throw new Error("malformed telemetry frame");
    }
  } else if (frame.type === "hello") {
    if (!frame.ranges || typeof frame.telemetry_hz !== "number") {
      throw new Error("malformed hello frame");
    }
  } else if (frame.type !== "error") {
    throw new Error(`unknown frame type ${(frame as { type: string }).type}`);
  }
  return frame;
}

/** Clamp a slider/command value into its advertised range before sending. */
export function clampToRange(value: number, range: [number, number]): number {
  if (Number.isNaN(value)) return range[0];
  return Math.min(Math.max(value, range[0]), range[1]);
}

export function serializeCommand(
  msg: CommandMessage,
  ranges: Ranges | null,
): string {
  if (ranges) {
    if (msg.type === "set_command") {
      const clamped = { ...msg };
      if (clamped.vx !== undefined) clamped.vx = clampToRange(clamped.vx, ranges.vx);
      if (clamped.vy !== undefined) clamped.vy = clampToRange(clamped.vy, ranges.vy);
      if (clamped.yaw_rate !== undefined)
        clamped.yaw_rate = clampToRange(clamped.yaw_rate, ranges.yaw_rate);
      return JSON.stringify(clamped);
    }
    if (msg.type === "set_shape") {
      const clamped = { ...msg };
      if (clamped.h !== undefined) clamped.h = clampToRange(clamped.h, ranges.h);
      if (clamped.g_c !== undefined)
        clamped.g_c = clampToRange(clamped.g_c, ranges.g_c);
      return JSON.stringify(clamped);
    }
  }
  return JSON.stringify(msg);
}
