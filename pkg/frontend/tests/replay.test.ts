import { describe, expect, it } from "vitest";

import { parseDemoFile, ReplayCursor } from "../src/replay.js";
import { cameraFollowing, vehicleCorners, worldToScreen } from "../src/render.js";

function demoText(): string {
  const lines = [
    JSON.stringify({ ep: 0, scenario: "SingleLaneFollowing", seed: 4, source: "human" }),
  ];
  for (let t = 0; t < 5; t++) {
    lines.push(
      JSON.stringify({
        ep: 0,
        t,
        obs: [0, 1, 2],
        steer: 0.01 * t,
        lon: 0.5,
        x: t * 1.0,
        y: 0,
        heading: 0,
        speed: 10,
      }),
    );
  }
  lines.push(JSON.stringify({ ep: 1, scenario: "Overtake", seed: 9, source: "human" }));
  lines.push(
    JSON.stringify({ ep: 1, t: 0, obs: [], steer: 0, lon: 0, x: 5, y: 1, heading: 0.1, speed: 2 }),
  );
  return lines.join("\n");
}

describe("parseDemoFile", () => {
  it("splits episodes on header lines", () => {
    const eps = parseDemoFile(demoText());
    expect(eps.length).toBe(2);
    expect(eps[0].steps.length).toBe(5);
    expect(eps[0].scenario).toBe("SingleLaneFollowing");
    expect(eps[0].seed).toBe(4);
    expect(eps[1].steps[0].x).toBe(5);
  });

  it("ignores junk lines and empty files", () => {
    expect(parseDemoFile("")).toEqual([]);
    expect(parseDemoFile("not json\n\n{\"ep\": 0}")).toEqual([]);
  });
});

describe("ReplayCursor", () => {
  it("plays forward and stops at the end", () => {
    const cursor = new ReplayCursor(parseDemoFile(demoText())[0]);
    cursor.play();
    for (let i = 0; i < 10; i++) cursor.advance();
    expect(cursor.index).toBe(4);
    expect(cursor.playing).toBe(false);
  });

  it("does not advance while paused", () => {
    const cursor = new ReplayCursor(parseDemoFile(demoText())[0]);
    cursor.advance();
    expect(cursor.index).toBe(0);
  });

  it("scrubs by fraction with clamping", () => {
    const cursor = new ReplayCursor(parseDemoFile(demoText())[0]);
    cursor.seek(0.5);
    expect(cursor.index).toBe(2);
    cursor.seek(2.0);
    expect(cursor.index).toBe(4);
    cursor.seek(-1);
    expect(cursor.index).toBe(0);
  });

  it("replays the recorded pose trace verbatim", () => {
    const episode = parseDemoFile(demoText())[0];
    const cursor = new ReplayCursor(episode);
    cursor.play();
    const xs: number[] = [cursor.current().x];
    while (cursor.playing) {
      const before = cursor.index;
      cursor.advance();
      if (cursor.index !== before) xs.push(cursor.current().x);
    }
    expect(xs).toEqual([0, 1, 2, 3, 4]);
  });
});

describe("render helpers", () => {
  it("camera keeps the ego at the viewport center", () => {
    const ego = { x: 33, y: -7, heading: 1, speed: 5 };
    const cam = cameraFollowing(ego);
    expect(worldToScreen(cam, 800, 600, ego.x, ego.y)).toEqual([400, 300]);
  });

  it("flips the world y axis so north is up", () => {
    const cam = cameraFollowing({ x: 0, y: 0, heading: 0, speed: 0 });
    const [, sy] = worldToScreen(cam, 800, 600, 0, 10);
    expect(sy).toBeLessThan(300);
  });

  it("rotates vehicle rectangles by heading", () => {
    const flat = vehicleCorners({ x: 0, y: 0, heading: 0, speed: 0 });
    expect(flat[0][0]).toBeCloseTo(2.3, 9);
    expect(flat[0][1]).toBeCloseTo(1.0, 9);
    const rot = vehicleCorners({ x: 0, y: 0, heading: Math.PI / 2, speed: 0 });
    expect(rot[0][0]).toBeCloseTo(-1.0, 9);
    expect(rot[0][1]).toBeCloseTo(2.3, 9);
  });
});
