import { describe, expect, it } from "vitest";

import { SessionClient } from "../src/client.js";
import { NO_KEYS } from "../src/input.js";

class MockSocket {
  sent: any[] = [];
  send(text: string): void {
    this.sent.push(JSON.parse(text));
  }
}

function stateFrame(tick: number, done: string | null = null): string {
  return JSON.stringify({
    type: "state",
    tick,
    ego: { x: 0, y: 0, heading: 0, speed: 5 },
    zombies: [],
    lanes: [{ id: "main", width: 3.5, center: [[0, 0], [100, 0]] }],
    done,
  });
}

function openClient(): { client: SessionClient; socket: MockSocket } {
  const socket = new MockSocket();
  const client = new SessionClient(socket);
  client.opened();
  client.reset("single_follow", 3);
  client.onMessage(stateFrame(0));
  return { client, socket };
}

describe("SessionClient lockstep", () => {
  it("sends reset first and waits for the state frame", () => {
    const socket = new MockSocket();
    const client = new SessionClient(socket);
    client.opened();
    client.reset("single_follow", 7);
    expect(socket.sent).toEqual([{ type: "reset", scenario: "single_follow", seed: 7 }]);
    // no control goes out before the reset is answered
    expect(client.tick(NO_KEYS)).toBe(false);
    expect(socket.sent.length).toBe(1);
  });

  it("never has two outstanding messages", () => {
    const { client, socket } = openClient();
    expect(client.tick(NO_KEYS)).toBe(true);
    // second tick without a server reply is skipped
    expect(client.tick(NO_KEYS)).toBe(false);
    expect(client.tick(NO_KEYS)).toBe(false);
    expect(socket.sent.filter((m) => m.type === "control").length).toBe(1);
    client.onMessage(stateFrame(1));
    expect(client.tick(NO_KEYS)).toBe(true);
    expect(socket.sent.filter((m) => m.type === "control").length).toBe(2);
    expect(client.state.protocolViolations).toBe(0);
  });

  it("runs a sustained lockstep session without violations", () => {
    const { client, socket } = openClient();
    let tick = 0;
    // simulate 6000 ticks (5 minutes at 20 Hz) of request/reply
    for (let i = 0; i < 6000; i++) {
      if (client.tick({ ...NO_KEYS, up: i % 3 === 0 })) {
        tick += 1;
        client.onMessage(stateFrame(tick));
      }
    }
    expect(client.state.protocolViolations).toBe(0);
    expect(client.state.framesReceived).toBe(6001); // reset reply + controls
    const controls = socket.sent.filter((m) => m.type === "control");
    expect(controls.length).toBe(6000);
    for (const c of controls) {
      expect(Math.abs(c.steer)).toBeLessThanOrEqual(0.5);
      expect(Math.abs(c.lon)).toBeLessThanOrEqual(1.0);
    }
  });

  it("stops sending controls once the episode is done", () => {
    const { client } = openClient();
    client.tick(NO_KEYS);
    client.onMessage(stateFrame(1, "Collision"));
    expect(client.tick(NO_KEYS)).toBe(false);
  });

  it("records the server error message", () => {
    const { client } = openClient();
    client.tick(NO_KEYS);
    client.onMessage(JSON.stringify({ type: "error", msg: "bad control frame" }));
    expect(client.state.lastError).toBe("bad control frame");
    // error frames also release the lockstep
    expect(client.tick(NO_KEYS)).toBe(true);
  });

  it("survives malformed server frames", () => {
    const { client } = openClient();
    client.onMessage("garbage");
    expect(client.state.lastError).toBe("unparseable server frame");
  });

  it("record toggle is forwarded", () => {
    const { client, socket } = openClient();
    client.toggleRecording(true);
    expect(socket.sent.at(-1)).toEqual({ type: "record", on: true });
    expect(client.state.recording).toBe(true);
  });
});
