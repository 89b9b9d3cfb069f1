// Wire protocol shared with the simulation service. Text frames, JSON
// payloads; the server answers every client frame, which is what makes the
// lockstep loop possible.

export interface VehicleFrame {
  x: number;
  y: number;
  heading: number;
  speed: number;
}

export interface LaneFrame {
  id: string;
  width: number;
  center: [number, number][];
}

export interface StateFrame {
  type: "state";
  tick: number;
  ego: VehicleFrame & { accel?: number };
  zombies: VehicleFrame[];
  lanes: LaneFrame[];
  done: string | null;
}

export interface ErrorFrame {
  type: "error";
  msg: string;
}

export type ServerFrame = StateFrame | ErrorFrame;

export interface ControlMessage {
  type: "control";
  steer: number;
  lon: number;
}

export interface ResetMessage {
  type: "reset";
  scenario: string;
  seed: number;
}

export interface RecordMessage {
  type: "record";
  on: boolean;
}

export type ClientMessage = ControlMessage | ResetMessage | RecordMessage;

export function parseServerFrame(text: string): ServerFrame | null {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const frame = obj as Record<string, unknown>;
  if (frame.type === "error" && typeof frame.msg === "string") {
    return { type: "error", msg: frame.msg };
  }
  if (
    frame.type === "state" &&
    typeof frame.tick === "number" &&
    typeof frame.ego === "object" &&
    Array.isArray(frame.zombies) &&
    Array.isArray(frame.lanes)
  ) {
    return frame as unknown as StateFrame;
  }
  return null;
}
