// Lockstep session client: exactly one outstanding message per received
// server frame. The loop ticks at 20 Hz; if the previous frame has not been
// answered yet, the tick is skipped rather than queueing a second control.

import { Control, HeldKeys, inputToControl } from "./input.js";
import { parseServerFrame, ServerFrame, StateFrame } from "./protocol.js";

export interface OutboundSocket {
  send(text: string): void;
}

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface ClientState {
  status: ConnectionStatus;
  lastState: StateFrame | null;
  lastError: string | null;
  control: Control;
  recording: boolean;
  awaitingReply: boolean;
  protocolViolations: number;
  framesReceived: number;
}

export function freshClientState(): ClientState {
  return {
    status: "connecting",
    lastState: null,
    lastError: null,
    control: { steer: 0, lon: 0 },
    recording: false,
    awaitingReply: false,
    protocolViolations: 0,
    framesReceived: 0,
  };
}

export class SessionClient {
  readonly state: ClientState;
  private socket: OutboundSocket;
  readonly dt: number;

  constructor(socket: OutboundSocket, dt = 0.05) {
    this.socket = socket;
    this.dt = dt;
    this.state = freshClientState();
  }

  opened(): void {
    this.state.status = "open";
  }

  closed(): void {
    this.state.status = "closed";
    this.state.awaitingReply = false;
  }

  /** Scenario picker: issues a reset and restarts the lockstep cycle. */
  reset(scenario: string, seed: number): void {
    if (this.state.status !== "open") return;
    this.state.recording = false;
    this.state.control = { steer: 0, lon: 0 };
    this.send({ type: "reset", scenario, seed });
  }

  toggleRecording(on: boolean): void {
    if (this.state.status !== "open" || this.state.lastState === null) return;
    this.state.recording = on;
    this.send({ type: "record", on });
  }

  /** One 20 Hz tick: advance the input ramps and, when the line is clear,
   * send the next control. Returns true when a control frame went out. */
  tick(keys: HeldKeys): boolean {
    this.state.control = inputToControl(keys, this.state.control, this.dt);
    if (
      this.state.status !== "open" ||
      this.state.awaitingReply ||
      this.state.lastState === null ||
      this.state.lastState.done !== null
    ) {
      return false;
    }
    this.send({
      type: "control",
      steer: this.state.control.steer,
      lon: this.state.control.lon,
    });
    return true;
  }

  onMessage(text: string): ServerFrame | null {
    const frame = parseServerFrame(text);
    if (frame === null) {
      this.state.lastError = "unparseable server frame";
      return null;
    }
    this.state.awaitingReply = false;
    this.state.framesReceived += 1;
    if (frame.type === "error") {
      this.state.lastError = frame.msg;
    } else {
      this.state.lastState = frame;
    }
    return frame;
  }

  private send(msg: object): void {
    if (this.state.awaitingReply) {
      // guarded by callers; counted so tests can assert the lockstep holds
      this.state.protocolViolations += 1;
      return;
    }
    this.state.awaitingReply = true;
    this.socket.send(JSON.stringify(msg));
  }
}
