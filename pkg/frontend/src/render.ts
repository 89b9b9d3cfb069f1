// Schematic top-down rendering: lane polylines, heading-oriented vehicle
// rectangles, and a HUD. The camera follows the ego vehicle.

import { StateFrame, VehicleFrame } from "./protocol.js";

export const PIXELS_PER_METER = 6.0;

export interface Camera {
  cx: number; // world coords at the viewport center
  cy: number;
  scale: number; // pixels per meter
}

export function cameraFollowing(ego: VehicleFrame, scale = PIXELS_PER_METER): Camera {
  return { cx: ego.x, cy: ego.y, scale };
}

/** World point -> canvas pixels (y axis flipped so north is up). */
export function worldToScreen(
  cam: Camera,
  width: number,
  height: number,
  x: number,
  y: number,
): [number, number] {
  return [width / 2 + (x - cam.cx) * cam.scale, height / 2 - (y - cam.cy) * cam.scale];
}

export function vehicleCorners(v: VehicleFrame, halfLen = 2.3, halfWid = 1.0): [number, number][] {
  const c = Math.cos(v.heading);
  const s = Math.sin(v.heading);
  const local: [number, number][] = [
    [halfLen, halfWid],
    [halfLen, -halfWid],
    [-halfLen, -halfWid],
    [-halfLen, halfWid],
  ];
  return local.map(([lx, ly]) => [v.x + c * lx - s * ly, v.y + s * lx + c * ly]);
}

export interface Hud {
  speedKmh: number;
  tick: number;
  recording: boolean;
  done: string | null;
}

export function hudFrom(state: StateFrame, recording: boolean): Hud {
  return {
    speedKmh: state.ego.speed * 3.6,
    tick: state.tick,
    recording,
    done: state.done,
  };
}

function drawPolygon(ctx: CanvasRenderingContext2D, pts: [number, number][]): void {
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (const [x, y] of pts.slice(1)) ctx.lineTo(x, y);
  ctx.closePath();
  ctx.fill();
}

export function renderFrame(
  ctx: CanvasRenderingContext2D,
  state: StateFrame,
  recording: boolean,
): void {
  const { width, height } = ctx.canvas;
  const cam = cameraFollowing(state.ego);
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, width, height);

  for (const lane of state.lanes) {
    ctx.strokeStyle = "#2e3b47";
    ctx.lineWidth = lane.width * cam.scale;
    ctx.lineCap = "round";
    ctx.beginPath();
    lane.center.forEach(([x, y], i) => {
      const [sx, sy] = worldToScreen(cam, width, height, x, y);
      if (i === 0) ctx.moveTo(sx, sy);
      else ctx.lineTo(sx, sy);
    });
    ctx.stroke();
    ctx.strokeStyle = "#55606a"; // centerline accent over the lane body
    ctx.lineWidth = 1;
    ctx.stroke();
  }

  for (const z of state.zombies) {
    ctx.fillStyle = "#c2574a";
    drawPolygon(ctx, vehicleCorners(z).map(([x, y]) => worldToScreen(cam, width, height, x, y)));
  }
  ctx.fillStyle = "#4aa3c2";
  drawPolygon(ctx, vehicleCorners(state.ego).map(([x, y]) => worldToScreen(cam, width, height, x, y)));

  const hud = hudFrom(state, recording);
  ctx.fillStyle = "#e8e8e8";
  ctx.font = "14px monospace";
  ctx.fillText(`v ${hud.speedKmh.toFixed(1)} km/h   tick ${hud.tick}`, 12, 20);
  if (hud.recording) {
    ctx.fillStyle = "#e05555";
    ctx.fillText("REC", 12, 40);
  }
  if (hud.done) {
    ctx.fillStyle = "#f0c040";
    ctx.fillText(`episode done: ${hud.done} (pick a scenario to reset)`, 12, 60);
  }
}
