"use strict";
// HUD line formatting, kept free of DOM so the tests can exercise it.
Object.defineProperty(exports, "__esModule", { value: true });
exports.formatHud = formatHud;
exports.steerBar = steerBar;
function formatHud(t, stats) {
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
function steerBar(steer, width = 21) {
    const mid = Math.floor(width / 2);
    const pos = Math.round((steer + 1) / 2 * (width - 1));
    return Array.from({ length: width }, (_, i) => i === pos ? "O" : i === mid ? "|" : "-").join("");
}
