"""WebSocket bridge between the simulator and the browser driving UI.

The session is lockstep: the world advances only when a control frame
arrives, so a recorded control sequence replayed through a fresh world with
the same seed reproduces the episode exactly. One session owns one world.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .controller import ControlAction, clamp, LON_CAP, STEER_CAP
from .gail_trainer import EPISODE_STEP_CAP, Demonstration, DemoHeader, write_demos
from .local_map import OffRouteError, build_local_map, encode_observation
from .world_sim import (DoneReason, World, create_scenario, default_config,
                        parse_scenario_kind, step)

log = logging.getLogger("moddrive.server")

MAX_ACCEPTED_ACCEL = 6.0


@dataclass
class Session:
    out_path: str = "human_demos.jsonl"
    world: World | None = None
    recording: bool = False
    rows: list[dict] = field(default_factory=list)
    episodes_written: int = 0
    speeds: list[float] = field(default_factory=list)


def _state_frame(world: World) -> dict:
    return {
        "type": "state",
        "tick": world.tick,
        "ego": {
            "x": world.ego.pose.x, "y": world.ego.pose.y,
            "heading": world.ego.pose.heading, "speed": world.ego.speed,
            "accel": world.ego.acceleration,
        },
        "zombies": [
            {"x": z.state.pose.x, "y": z.state.pose.y,
             "heading": z.state.pose.heading, "speed": z.state.speed}
            for z in world.zombies
        ],
        "lanes": [
            {"id": lane.lane_id, "width": lane.width,
             "center": [[float(x), float(y)] for x, y in lane.center.pts]}
            for lane in world.lanes.values()
        ],
        "done": world.done_reason.value if world.done_reason else None,
    }


def _error(msg: str) -> dict:
    return {"type": "error", "msg": msg}


def _finalize_recording(session: Session) -> dict | None:
    """Apply the demo acceptance filter and append the episode; returns an
    error frame when the episode is rejected."""
    rows = session.rows
    session.rows = []
    session.recording = False
    if session.world is None or len(rows) < 4:
        return _error("episode rejected: too short")
    if session.world.done_reason == DoneReason.COLLISION:
        return _error("episode rejected: collision")
    speeds = np.array([r["speed"] for r in rows] + [session.world.ego.speed])
    accels = np.diff(speeds) / session.world.dt
    if np.max(np.abs(accels)) > MAX_ACCEPTED_ACCEL + 1e-9:
        return _error("episode rejected: dangerous acceleration")
    demo = Demonstration(
        DemoHeader(session.episodes_written, session.world.config.kind,
                   session.world.config.seed, "human"),
        np.array([r["obs"] for r in rows]),
        np.array([[r["steer"], r["lon"]] for r in rows]),
        np.array([[r["x"], r["y"], r["heading"]] for r in rows]),
        np.array([r["speed"] for r in rows]),
    )
    write_demos(session.out_path, [demo], append=session.episodes_written > 0)
    session.episodes_written += 1
    return None


def handle_message(session: Session, text: str) -> list[dict]:
    """Process one client frame; returns the frames to send back."""
    try:
        msg = json.loads(text)
        kind = msg["type"]
    except (json.JSONDecodeError, TypeError, KeyError):
        return [_error("malformed message")]

    if kind == "reset":
        try:
            scenario = parse_scenario_kind(str(msg["scenario"]))
            seed = int(msg.get("seed", 0))
        except (KeyError, ValueError) as exc:
            return [_error(f"bad reset: {exc}")]
        session.world = create_scenario(default_config(scenario, seed=seed))
        session.rows = []
        session.recording = False
        return [_state_frame(session.world)]

    if kind == "control":
        if session.world is None:
            return [_error("no active episode; send reset first")]
        if session.world.done:
            return [_error("episode done; send reset")]
        try:
            action = ControlAction(clamp(float(msg["steer"]), -STEER_CAP, STEER_CAP),
                                   clamp(float(msg["lon"]), -LON_CAP, LON_CAP))
        except (KeyError, TypeError, ValueError):
            return [_error("bad control frame")]
        world = session.world
        if session.recording and len(session.rows) < EPISODE_STEP_CAP:
            try:
                obs = encode_observation(build_local_map(world))
            except OffRouteError:
                world.mark_off_route()
                return [_state_frame(world)]
            session.rows.append({
                "obs": obs, "steer": action.steer, "lon": action.lon,
                "x": world.ego.pose.x, "y": world.ego.pose.y,
                "heading": world.ego.pose.heading, "speed": world.ego.speed,
            })
        step(world, action)
        return [_state_frame(world)]

    if kind == "record":
        if session.world is None:
            return [_error("no active episode")]
        frames: list[dict] = []
        on = bool(msg.get("on"))
        if on and not session.recording:
            session.recording = True
            session.rows = []
        elif not on and session.recording:
            err = _finalize_recording(session)
            if err:
                frames.append(err)
        frames.append(_state_frame(session.world))
        return frames

    return [_error(f"unknown message type {kind!r}")]


def serve_session(conn, out_path: str = "human_demos.jsonl") -> None:
    """Message loop over a connection exposing recv() -> str | None and
    send(str). A disconnect discards any recording still in progress."""
    session = Session(out_path=out_path)
    while True:
        try:
            text = conn.recv()
        except Exception:
            break
        if text is None:
            break
        for frame in handle_message(session, text):
            conn.send(json.dumps(frame))


class _WsAdapter:
    def __init__(self, websocket) -> None:
        self.ws = websocket

    def recv(self):
        try:
            return self.ws.recv()
        except Exception:
            return None

    def send(self, text: str) -> None:
        self.ws.send(text)


def serve(port: int, host: str = "127.0.0.1",
          out_path: str = "human_demos.jsonl") -> None:
    """Run the WebSocket server until interrupted (one session per client)."""
    from websockets.sync.server import serve as ws_serve

    def handler(websocket):
        log.info("session opened")
        serve_session(_WsAdapter(websocket), out_path)
        log.info("session closed")

    with ws_serve(handler, host, port) as server:
        log.info("listening on ws://%s:%d", host, port)
        server.serve_forever()
