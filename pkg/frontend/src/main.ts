// Page wiring: telemetry rendering, keyboard driving, record/overlay toggles.

import { DriveClient } from "./client.js";
import { DriveInput, SEND_HZ, initialInput, stepInput, toControlMsg, toggleRecord } from "./input.js";
import { HudStats, formatHud, steerBar } from "./hud.js";
import { TelemetryMsg } from "./protocol.js";

const params = new URLSearchParams(location.search);
const server = params.get("server")
  ?? `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const hudEl = document.getElementById("hud") as HTMLPreElement;
const statusEl = document.getElementById("status") as HTMLSpanElement;
const recordEl = document.getElementById("record") as HTMLSpanElement;

let input: DriveInput = initialInput;
const held = new Set<string>();
let latest: TelemetryMsg | null = null;
let overlayOn = false;
const stats: HudStats = { frames: 0, errors: 0, connected: false };
let lastSeq = -1;

const frameImg = new Image();
const overlayImg = new Image();

const client = new DriveClient(server, {
  onMessage: (msg) => {
    if (msg.type === "error") {
      stats.errors += 1;
      return;
    }
    if (msg.seq > lastSeq) {
      lastSeq = msg.seq;
      stats.frames += 1;
    }
    latest = msg;
    frameImg.src = `data:image/png;base64,${msg.frame_png_b64}`;
    if (msg.saliency_png_b64) {
      overlayImg.src = `data:image/png;base64,${msg.saliency_png_b64}`;
    }
  },
  onMalformed: () => {
    stats.errors += 1;
  },
  onStatus: (connected) => {
    stats.connected = connected;
    statusEl.textContent = connected ? "connected" : "disconnected";
    statusEl.className = connected ? "ok" : "bad";
  },
});

window.addEventListener("keydown", (ev) => {
  if (ev.repeat) return;
  if (ev.key === "r" || ev.key === "R") {
    input = toggleRecord(input);
    return;
  }
  if (ev.key === "o" || ev.key === "O") {
    overlayOn = !overlayOn;
    return;
  }
  held.add(ev.key);
});
window.addEventListener("keyup", (ev) => held.delete(ev.key));
window.addEventListener("blur", () => held.clear());

// control cadence is fixed and decoupled from rendering
let lastStep = performance.now();
setInterval(() => {
  const now = performance.now();
  input = stepInput(input, held, (now - lastStep) / 1000);
  lastStep = now;
  if (stats.connected) {
    client.send(toControlMsg(input));
  }
  recordEl.textContent = input.record ? "REC" : "";
}, 1000 / SEND_HZ);

function draw(): void {
  ctx.imageSmoothingEnabled = false;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (frameImg.complete && frameImg.naturalWidth > 0) {
    ctx.drawImage(frameImg, 0, 0, canvas.width, canvas.height);
    if (overlayOn && overlayImg.complete && overlayImg.naturalWidth > 0) {
      ctx.globalAlpha = 0.55;
      ctx.drawImage(overlayImg, 0, 0, canvas.width, canvas.height);
      ctx.globalAlpha = 1.0;
    }
  }
  const lines = formatHud(latest, stats);
  lines.push(steerBar(input.steer), `throttle ${(input.throttle * 100).toFixed(0)}%`);
  hudEl.textContent = lines.join("\n");
  requestAnimationFrame(draw);
}
requestAnimationFrame(draw);
