// HUD line formatting, kept free of DOM so the tests can exercise it.

import { TelemetryMsg } from "./protocol.js";

export interface HudStats {
  frames: number;
  errors: number;
  connected: boolean;
}

export function formatHud(t: TelemetryMsg | null, stats: HudStats): string[] {
  if (!t) {
    return [stats.connected ? "waiting for telemetry" : "disconnected", ""];
  }
  const ultra = t.ultra.join("");
  return [
    `t=${t.t.toFixed(2)}s  fps=${t.fps.toFixed(1)}  seq=${t.seq}`,
    `pwm=${t.throttle_pwm}  steer=${t.steer_u.toFixed(2)}  mode=${t.mode}`,
    `ultra=${ultra}  batt=${t.battery_v.toFixed(2)}V  race=${t.race_phase}`,
    `frames=${stats.frames}  drops=${stats.errors}`,
  ];
}

export function steerBar(steer: number, width = 21): string {
  const mid = Math.floor(width / 2);
  const pos = Math.round((steer + 1) / 2 * (width - 1));
  return Array.from({ length: width }, (_, i) =>
    i === pos ? "O" : i === mid ? "|" : "-").join("");
}
