// Keyboard teleoperation: held arrow keys ramp the virtual steering wheel and
// pedal toward their caps; released axes decay back to center so the car is
// drivable at a fixed 20 Hz input rate.

export const STEER_CAP = 0.5;
export const LON_CAP = 1.0;

export const STEER_RATE = 1.0; // rad/s toward the cap while held
export const LON_RATE = 2.0; // units/s toward the cap while held
export const CENTER_RATE = 2.0; // rad/s (and units/s) decay when released

export interface Control {
  steer: number;
  lon: number;
}

export interface HeldKeys {
  left: boolean;
  right: boolean;
  up: boolean;
  down: boolean;
}

export const NO_KEYS: HeldKeys = { left: false, right: false, up: false, down: false };

function clamp(x: number, lo: number, hi: number): number {
  return x < lo ? lo : x > hi ? hi : x;
}

function decay(value: number, rate: number, dt: number): number {
  const step = rate * dt;
  if (Math.abs(value) <= step) return 0;
  return value - Math.sign(value) * step;
}

export function inputToControl(keys: HeldKeys, prev: Control, dt: number): Control {
  let steer = prev.steer;
  if (keys.left && !keys.right) {
    steer += STEER_RATE * dt; // left is positive steer
  } else if (keys.right && !keys.left) {
    steer -= STEER_RATE * dt;
  } else {
    steer = decay(steer, CENTER_RATE, dt);
  }

  let lon = prev.lon;
  if (keys.up && !keys.down) {
    lon += LON_RATE * dt;
  } else if (keys.down && !keys.up) {
    lon -= LON_RATE * dt;
  } else {
    lon = decay(lon, CENTER_RATE, dt);
  }

  return {
    steer: clamp(steer, -STEER_CAP, STEER_CAP),
    lon: clamp(lon, -LON_CAP, LON_CAP),
  };
}

export function keysFromSet(pressed: Set<string>): HeldKeys {
  return {
    left: pressed.has("ArrowLeft") || pressed.has("a"),
    right: pressed.has("ArrowRight") || pressed.has("d"),
    up: pressed.has("ArrowUp") || pressed.has("w"),
    down: pressed.has("ArrowDown") || pressed.has("s"),
  };
}
