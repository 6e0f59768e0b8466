"use strict";
// Keyboard-to-control state machine. Arrow keys ramp rather than toggle so a
// human can produce smooth demonstrations; steering self-centers on release,
// throttle holds its value.
Object.defineProperty(exports, "__esModule", { value: true });
exports.initialInput = exports.SEND_HZ = exports.THROTTLE_RATE = exports.STEER_DECAY = exports.STEER_RATE = void 0;
exports.stepInput = stepInput;
exports.toggleRecord = toggleRecord;
exports.toControlMsg = toControlMsg;
exports.STEER_RATE = 2.5; // full lock in 0.4 s
exports.STEER_DECAY = 2.5; // recenter at the same rate
exports.THROTTLE_RATE = 1.0; // stop to full in 1 s
exports.SEND_HZ = 20; // fixed control cadence
exports.initialInput = { steer: 0, throttle: 0, record: false };
function clamp(x, lo, hi) {
    return Math.min(Math.max(x, lo), hi);
}
/** Advance the ramps by dt seconds given the currently held keys. */
function stepInput(state, held, dt) {
    const left = held.has("ArrowLeft");
    const right = held.has("ArrowRight");
    let steer = state.steer;
    if (left !== right) {
        steer += (right ? 1 : -1) * exports.STEER_RATE * dt;
    }
    else {
        const decay = exports.STEER_DECAY * dt;
        steer = Math.abs(steer) <= decay ? 0 : steer - Math.sign(steer) * decay;
    }
    const up = held.has("ArrowUp");
    const down = held.has("ArrowDown");
    let throttle = state.throttle;
    if (up !== down) {
        throttle += (up ? 1 : -1) * exports.THROTTLE_RATE * dt;
    }
    return {
        steer: clamp(steer, -1, 1),
        throttle: clamp(throttle, 0, 1),
        record: state.record,
    };
}
/** Record toggles on the R keydown edge, not while held. */
function toggleRecord(state) {
    return { ...state, record: !state.record };
}
function toControlMsg(state) {
    return {
        type: "control",
        steer: clamp(state.steer, -1, 1),
        throttle: clamp(state.throttle, 0, 1),
        record: state.record,
    };
}
