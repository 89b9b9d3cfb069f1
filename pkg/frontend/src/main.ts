// Browser bootstrap: wires the WebSocket session, keyboard input, canvas
// rendering, the recording toggle, and the replay file picker together.

import { SessionClient } from "./client.js";
import { keysFromSet } from "./input.js";
import { renderFrame } from "./render.js";
import { parseDemoFile, ReplayCursor } from "./replay.js";
import { StateFrame } from "./protocol.js";

const TICK_MS = 50; // 20 Hz lockstep

const SCENARIOS = [
  "empty_town",
  "single_follow",
  "two_lanes_follow",
  "crossroad_merge",
  "roundabout_merge",
  "crossroad_turn_left",
  "overtake",
];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const status = el<HTMLSpanElement>("status");
  const picker = el<HTMLSelectElement>("scenario");
  const seedBox = el<HTMLInputElement>("seed");
  const recordBtn = el<HTMLButtonElement>("record");
  const resetBtn = el<HTMLButtonElement>("reset");
  const replayInput = el<HTMLInputElement>("replay-file");
  const scrub = el<HTMLInputElement>("scrub");
  const playBtn = el<HTMLButtonElement>("play");

  for (const name of SCENARIOS) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    picker.appendChild(opt);
  }
  picker.value = "single_follow";

  const url = `ws://${location.hostname || "127.0.0.1"}:8700`;
  const ws = new WebSocket(url);
  const client = new SessionClient({ send: (t) => ws.send(t) }, TICK_MS / 1000);

  ws.onopen = () => {
    client.opened();
    status.textContent = `connected to ${url}`;
    client.reset(picker.value, Number(seedBox.value) || 0);
  };
  ws.onclose = () => {
    client.closed();
    status.textContent = "disconnected - retry by reloading";
  };
  ws.onmessage = (ev) => {
    const frame = client.onMessage(String(ev.data));
    if (frame && frame.type === "error") {
      status.textContent = `server: ${frame.msg}`;
    }
  };

  const pressed = new Set<string>();
  window.addEventListener("keydown", (e) => pressed.add(e.key));
  window.addEventListener("keyup", (e) => pressed.delete(e.key));

  resetBtn.onclick = () => {
    client.reset(picker.value, Number(seedBox.value) || 0);
    status.textContent = `scenario ${picker.value}`;
  };
  recordBtn.onclick = () => {
    client.toggleRecording(!client.state.recording);
    recordBtn.textContent = client.state.recording ? "stop recording" : "record";
  };

  // replay mode state
  let cursor: ReplayCursor | null = null;
  replayInput.onchange = async () => {
    const file = replayInput.files?.[0];
    if (!file) return;
    const episodes = parseDemoFile(await file.text());
    if (episodes.length === 0) {
      status.textContent = "no episodes in file";
      return;
    }
    cursor = new ReplayCursor(episodes[0]);
    status.textContent = `replaying ep ${episodes[0].ep} (${episodes[0].scenario})`;
  };
  playBtn.onclick = () => {
    if (!cursor) return;
    cursor.playing ? cursor.pause() : cursor.play();
    playBtn.textContent = cursor.playing ? "pause" : "play";
  };
  scrub.oninput = () => {
    cursor?.seek(Number(scrub.value) / 1000);
  };

  setInterval(() => {
    if (cursor) {
      cursor.advance();
      scrub.value = String(Math.round((cursor.index / Math.max(cursor.length - 1, 1)) * 1000));
      const step = cursor.current();
      const ghost: StateFrame = {
        type: "state",
        tick: step.t,
        ego: { x: step.x, y: step.y, heading: step.heading, speed: step.speed },
        zombies: [],
        lanes: client.state.lastState?.lanes ?? [],
        done: null,
      };
      renderFrame(ctx, ghost, false);
      return;
    }
    client.tick(keysFromSet(pressed));
    if (client.state.lastState) {
      renderFrame(ctx, client.state.lastState, client.state.recording);
    }
  }, TICK_MS);
}

window.addEventListener("DOMContentLoaded", main);
