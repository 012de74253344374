/**
 * Canvas renderers: oscillator time-series with wrap-aware line breaks, the
 * gait diagram (stance bars per leg), a top-down pose view with commanded
 * vs actual velocity arrows, and the leg-frame foot XZ scatter.
 */

import { LEG_NAMES, TelemetryFrame } from "./protocol.js";
import { RingBuffer } from "./ringbuffer.js";

export const LEG_COLORS = ["#e05252", "#4a90d9", "#3fa45b", "#b07ad9"];

interface Extent {
  t0: number;
  t1: number;
}

function timeExtent(buffers: RingBuffer[], windowSeconds: number): Extent {
  let t1 = -Infinity;
  for (const b of buffers) {
    const last = b.lastTime();
    if (last !== null && last > t1) t1 = last;
  }
  if (!Number.isFinite(t1)) t1 = 0;
  return { t0: t1 - windowSeconds, t1 };
}

function clearCanvas(ctx: CanvasRenderingContext2D, dim: boolean): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = dim ? "#2a2a2e" : "#1d1d21";
  ctx.fillRect(0, 0, width, height);
}

/** Multi-leg line plot; breaks the polyline when values jump by > wrapGap. */
export function drawSeries(
  ctx: CanvasRenderingContext2D,
  buffers: RingBuffer[],
  options: {
    yMin: number;
    yMax: number;
    windowSeconds: number;
    wrapGap?: number;
    dim?: boolean;
    label?: string;
  },
): void {
  const { width, height } = ctx.canvas;
  clearCanvas(ctx, options.dim ?? false);
  const { t0, t1 } = timeExtent(buffers, options.windowSeconds);
  const sx = (t: number) => ((t - t0) / (t1 - t0 || 1)) * (width - 8) + 4;
  const sy = (v: number) =>
    height - 4 - ((v - options.yMin) / (options.yMax - options.yMin)) * (height - 8);

  buffers.forEach((buffer, leg) => {
    const { t, v } = buffer.snapshot();
    ctx.strokeStyle = LEG_COLORS[leg % LEG_COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let pen = false;
    for (let i = 0; i < t.length; i++) {
      const gap =
        i > 0 && options.wrapGap !== undefined &&
        Math.abs(v[i] - v[i - 1]) > options.wrapGap;
      if (!pen || gap) {
        ctx.moveTo(sx(t[i]), sy(v[i]));
        pen = true;
      } else {
        ctx.lineTo(sx(t[i]), sy(v[i]));
      }
    }
    ctx.stroke();
  });
  if (options.label) {
    ctx.fillStyle = "#9a9aa5";
    ctx.font = "11px monospace";
    ctx.fillText(options.label, 8, 14);
  }
}

/** Gait diagram: one stance bar row per leg on a shared time axis. */
export function drawGaitDiagram(
  ctx: CanvasRenderingContext2D,
  contacts: RingBuffer[],
  options: { windowSeconds: number; dim?: boolean },
): void {
  const { width, height } = ctx.canvas;
  clearCanvas(ctx, options.dim ?? false);
  const { t0, t1 } = timeExtent(contacts, options.windowSeconds);
  const sx = (t: number) => ((t - t0) / (t1 - t0 || 1)) * (width - 40) + 36;
  const rowHeight = (height - 8) / 4;

  contacts.forEach((buffer, leg) => {
    const y = 4 + leg * rowHeight;
    ctx.fillStyle = "#9a9aa5";
    ctx.font = "10px monospace";
    ctx.fillText(LEG_NAMES[leg], 4, y + rowHeight * 0.65);
    const { t, v } = buffer.snapshot();
    ctx.fillStyle = LEG_COLORS[leg];
    let start: number | null = null;
    for (let i = 0; i < t.length; i++) {
      const inStance = v[i] > 0.5;
      if (inStance && start === null) start = t[i];
      const ends = !inStance || i === t.length - 1;
      if (start !== null && ends) {
        const end = inStance ? t[i] : t[Math.max(i - 1, 0)];
        ctx.fillRect(sx(start), y + 2, Math.max(sx(end) - sx(start), 1.5),
                     rowHeight - 6);
        start = null;
      }
    }
  });
}

/** Top-down trunk pose with commanded (grey) vs actual (white) velocity arrows. */
export function drawPoseView(
  ctx: CanvasRenderingContext2D,
  frame: TelemetryFrame | null,
  options: { dim?: boolean } = {},
): void {
  const { width, height } = ctx.canvas;
  clearCanvas(ctx, options.dim ?? false);
  if (!frame) return;
  const cx = width / 2;
  const cy = height / 2;
  const yaw = frame.rpy[2];
  ctx.save();
  ctx.translate(cx, cy);
  ctx.rotate(-yaw);
  ctx.fillStyle = "#44444c";
  ctx.strokeStyle = "#8888a0";
  ctx.lineWidth = 1.5;
  const bodyLen = Math.min(width, height) * 0.35;
  const bodyWid = bodyLen * 0.5;
  ctx.beginPath();
  ctx.rect(-bodyLen / 2, -bodyWid / 2, bodyLen, bodyWid);
  ctx.fill();
  ctx.stroke();
  // nose marker
  ctx.fillStyle = "#d0d0dc";
  ctx.beginPath();
  ctx.arc(bodyLen / 2, 0, 4, 0, Math.PI * 2);
  ctx.fill();
  // feet markers colored by contact
  const feet = [
    [bodyLen / 2, -bodyWid / 2],
    [bodyLen / 2, bodyWid / 2],
    [-bodyLen / 2, -bodyWid / 2],
    [-bodyLen / 2, bodyWid / 2],
  ];
  feet.forEach(([fx, fy], leg) => {
    ctx.fillStyle = frame.contacts[leg] ? LEG_COLORS[leg] : "#333339";
    ctx.beginPath();
    ctx.arc(fx, fy, 5, 0, Math.PI * 2);
    ctx.fill();
  });
  const arrow = (vx: number, vy: number, color: string) => {
    const scale = bodyLx(bodyLen);
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(0, 0);
    ctx.lineTo(vx * scale, -vy * scale);
    ctx.stroke();
  };
  arrow(frame.cmd.vx, frame.cmd.vy, "#77778a");
  arrow(frame.v_body[0], frame.v_body[1], "#f0f0f5");
  ctx.restore();
}

function bodyLx(bodyLen: number): number {
  return bodyLen * 0.9;
}

/** Leg-frame foot XZ scatter for the most recent frames. */
export function drawFootXZ(
  ctx: CanvasRenderingContext2D,
  history: TelemetryFrame[],
  options: { dim?: boolean } = {},
): void {
  const { width, height } = ctx.canvas;
  clearCanvas(ctx, options.dim ?? false);
  const sx = (x: number) => width / 2 + x * (width * 2.0);
  const sy = (z: number) => height * 0.1 - z * (height * 2.2);
  ctx.font = "10px monospace";
  history.forEach((frame, idx) => {
    const alpha = (idx + 1) / history.length;
    frame.foot_xz.forEach(([x, z], leg) => {
      ctx.fillStyle = LEG_COLORS[leg];
      ctx.globalAlpha = 0.15 + 0.85 * alpha;
      ctx.fillRect(sx(x) - 1.5, sy(z) - 1.5, 3, 3);
    });
  });
  ctx.globalAlpha = 1.0;
}
