// Keyboard-to-control state machine. Arrow keys ramp rather than toggle so a
// human can produce smooth demonstrations; steering self-centers on release,
// throttle holds its value.

import { ControlMsg } from "./protocol.js";

export const STEER_RATE = 2.5;    // full lock in 0.4 s
export const STEER_DECAY = 2.5;   // recenter at the same rate
export const THROTTLE_RATE = 1.0; // stop to full in 1 s
export const SEND_HZ = 20;        // fixed control cadence

export interface DriveInput {
  steer: number;
  throttle: number;
  record: boolean;
}

export const initialInput: DriveInput = { steer: 0, throttle: 0, record: false };

function clamp(x: number, lo: number, hi: number): number {
  return Math.min(Math.max(x, lo), hi);
}

/** Advance the ramps by dt seconds given the currently held keys. */
export function stepInput(state: DriveInput, held: ReadonlySet<string>, dt: number): DriveInput {
  const left = held.has("ArrowLeft");
  const right = held.has("ArrowRight");
  let steer = state.steer;
  if (left !== right) {
    steer += (right ? 1 : -1) * STEER_RATE * dt;
  } else {
    const decay = STEER_DECAY * dt;
    steer = Math.abs(steer) <= decay ? 0 : steer - Math.sign(steer) * decay;
  }
  const up = held.has("ArrowUp");
  const down = held.has("ArrowDown");
  let throttle = state.throttle;
  if (up !== down) {
    throttle += (up ? 1 : -1) * THROTTLE_RATE * dt;
  }
  return {
    steer: clamp(steer, -1, 1),
    throttle: clamp(throttle, 0, 1),
    record: state.record,
  };
}

/** Record toggles on the R keydown edge, not while held. */
export function toggleRecord(state: DriveInput): DriveInput {
  return { ...state, record: !state.record };
}

export function toControlMsg(state: DriveInput): ControlMsg {
  return {
    type: "control",
    steer: clamp(state.steer, -1, 1),
    throttle: clamp(state.throttle, 0, 1),
    record: state.record,
  };
}
