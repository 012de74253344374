/** Operator console wiring: sliders, buttons, live plots. */

import { TeleopSession } from "./session.js";
import { drawFootXZ, drawGaitDiagram, drawPoseView, drawSeries } from "./plots.js";
import { TelemetryFrame } from "./protocol.js";

const session = new TeleopSession();
const footHistory: TelemetryFrame[] = [];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element ${id}`);
  return node as T;
}

function canvasCtx(id: string): CanvasRenderingContext2D {
  return el<HTMLCanvasElement>(id).getContext("2d")!;
}

interface SliderSpec {
  id: string;
  rangeKey: "vx" | "vy" | "yaw_rate" | "h" | "g_c";
  send: (value: number) => void;
}

const sliders: SliderSpec[] = [
  { id: "vx", rangeKey: "vx", send: (v) => session.send({ type: "set_command", vx: v }) },
  { id: "vy", rangeKey: "vy", send: (v) => session.send({ type: "set_command", vy: v }) },
  {
    id: "yaw",
    rangeKey: "yaw_rate",
    send: (v) => session.send({ type: "set_command", yaw_rate: v }),
  },
  { id: "h", rangeKey: "h", send: (v) => session.send({ type: "set_shape", h: v }) },
  { id: "gc", rangeKey: "g_c", send: (v) => session.send({ type: "set_shape", g_c: v }) },
];

function setupControls(): void {
  for (const spec of sliders) {
    const input = el<HTMLInputElement>(`slider-${spec.id}`);
    const label = el<HTMLSpanElement>(`value-${spec.id}`);
    input.addEventListener("input", () => {
      label.textContent = Number(input.value).toFixed(2);
      spec.send(Number(input.value));
    });
  }
  el<HTMLButtonElement>("btn-push").addEventListener("click", () => {
    const angle = Math.random() * 2 * Math.PI;
    session.send({
      type: "push",
      dir: [Math.cos(angle), Math.sin(angle)],
      mag: 0.5,
    });
  });
  el<HTMLButtonElement>("btn-mass").addEventListener("click", () => {
    const kg = Number(el<HTMLInputElement>("input-mass").value);
    session.send({ type: "add_mass", kg: Number.isFinite(kg) ? kg : 0 });
  });
  el<HTMLButtonElement>("btn-pause").addEventListener("click", () => {
    session.send({ type: "pause" });
  });
  el<HTMLButtonElement>("btn-reset").addEventListener("click", () => {
    session.send({ type: "reset" });
  });
}

function applyRanges(): void {
  if (!session.ranges) return;
  for (const spec of sliders) {
    const input = el<HTMLInputElement>(`slider-${spec.id}`);
    const [lo, hi] = session.ranges[spec.rangeKey];
    input.min = String(lo);
    input.max = String(hi);
    input.step = "0.01";
    input.disabled = lo === hi;
  }
}

function updateStatus(): void {
  const badge = el<HTMLSpanElement>("status");
  badge.textContent = session.status;
  badge.className = `status ${session.status}`;
  const controls = el<HTMLDivElement>("controls");
  controls.classList.toggle("disabled", session.status !== "connected");
  for (const input of controls.querySelectorAll("input,button")) {
    (input as HTMLInputElement).disabled = session.status !== "connected";
  }
  el<HTMLSpanElement>("pending").textContent =
    session.pending.length > 0 ? `pending: ${session.pending.join(", ")}` : "";
  el<HTMLSpanElement>("error").textContent = session.lastError ?? "";
  const f = session.latest;
  if (f) {
    el<HTMLSpanElement>("readout").textContent =
      `t=${f.t.toFixed(2)}s  v=(${f.v_body[0].toFixed(2)}, ` +
      `${f.v_body[1].toFixed(2)})  h=${f.shape.h.toFixed(2)}  ` +
      `payload=${f.payload.toFixed(1)}kg  reward=${f.reward.toFixed(4)}` +
      `${f.paused ? "  [paused]" : ""}  drop=${(session.dropRate() * 100).toFixed(1)}%`;
  }
}

function render(): void {
  const dim = session.isStale();
  drawSeries(canvasCtx("plot-r"), session.buffers.r, {
    yMin: 0.9, yMax: 2.1, windowSeconds: 10, dim, label: "amplitude r",
  });
  drawSeries(canvasCtx("plot-theta"), session.buffers.theta, {
    yMin: 0, yMax: 2 * Math.PI, windowSeconds: 10, wrapGap: Math.PI, dim,
    label: "phase theta",
  });
  drawGaitDiagram(canvasCtx("plot-gait"), session.buffers.contact, {
    windowSeconds: 10, dim,
  });
  drawPoseView(canvasCtx("plot-pose"), session.latest, { dim });
  drawFootXZ(canvasCtx("plot-foot"), footHistory, { dim });
  requestAnimationFrame(render);
}

session.onChange(() => {
  applyRanges();
  updateStatus();
  if (session.latest) {
    footHistory.push(session.latest);
    if (footHistory.length > 100) footHistory.shift();
  }
});

setupControls();
const scheme = location.protocol === "https:" ? "wss" : "ws";
session.connect(`${scheme}://${location.host}/ws`);
requestAnimationFrame(render);
