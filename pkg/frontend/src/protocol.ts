// Wire protocol spoken with the drive server: one JSON document per
// newline-terminated line (raw socket) or per WebSocket message.

export interface ControlMsg {
  type: "control";
  steer: number;    // [-1, 1], negative steers left
  throttle: number; // [0, 1]
  record?: boolean;
}

export interface ModeMsg {
  type: "mode";
  mode: "manual" | "autopilot";
}

export type ClientMsg = ControlMsg | ModeMsg;

export interface TelemetryMsg {
  type: "telemetry";
  seq: number;
  t: number;
  frame_png_b64: string;
  steer_u: number;
  throttle_pwm: number;
  ultra: [number, number, number, number];
  imu: [number, number, number];
  mode: string;
  race_phase: string;
  fps: number;
  battery_v: number;
  saliency_png_b64?: string;
}

export interface ErrorMsg {
  type: "error";
  detail: string;
}

export type ServerMsg = TelemetryMsg | ErrorMsg;

/** Schema check mirroring the server's; returns an error string or null. */
export function validateClientMsg(msg: unknown): string | null {
  if (typeof msg !== "object" || msg === null || !("type" in msg)) {
    return "message must be an object with a type";
  }
  const m = msg as Record<string, unknown>;
  if (m.type === "control") {
    if (typeof m.steer !== "number" || !isFinite(m.steer)) return "steer must be a number";
    if (typeof m.throttle !== "number" || !isFinite(m.throttle)) return "throttle must be a number";
    if (m.steer < -1 || m.steer > 1) return `steer ${m.steer} outside [-1, 1]`;
    if (m.throttle < 0 || m.throttle > 1) return `throttle ${m.throttle} outside [0, 1]`;
    if ("record" in m && typeof m.record !== "boolean") return "record must be a boolean";
    return null;
  }
  if (m.type === "mode") {
    if (m.mode !== "manual" && m.mode !== "autopilot") return "mode must be manual or autopilot";
    return null;
  }
  return `unknown message type ${String(m.type)}`;
}

/** Parse one server line/message; null when malformed (caller counts errors). */
export function parseServerMsg(text: string): ServerMsg | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const m = doc as Record<string, unknown>;
  if (m.type === "error" && typeof m.detail === "string") return m as unknown as ErrorMsg;
  if (m.type !== "telemetry") return null;
  const numbers = ["seq", "t", "steer_u", "throttle_pwm", "fps", "battery_v"];
  for (const key of numbers) {
    if (typeof m[key] !== "number") return null;
  }
  if (typeof m.frame_png_b64 !== "string") return null;
  if (!Array.isArray(m.ultra) || m.ultra.length !== 4) return null;
  if (!Array.isArray(m.imu) || m.imu.length !== 3) return null;
  if (typeof m.mode !== "string" || typeof m.race_phase !== "string") return null;
  return m as unknown as TelemetryMsg;
}

export function encodeClientMsg(msg: ClientMsg): string {
  return JSON.stringify(msg) + "\n";
}
