"""WebSocket session service: live teleoperation and policy monitoring.

One session per connection, each owning its own simulator.  The tick loop
runs at the camera rate (15 Hz wall clock) and latches the most recent client
action; frames go out through a latest-wins slot so a slow client can never
stall or distort the simulation.
"""

import asyncio
import base64
import json
import math

import numpy as np

from . import data, simworld, trainer
from .imaging import PipelineParams, preprocess
from .runtime import predict

TICK_HZ = 15.0
DEFAULT_ACTION = 2  # front


class Session:
    def __init__(self, ws):
        self.ws = ws
        self.mode = "idle"
        self.track = None
        self.style = "sim"
        self.seed = 0
        self.state = None
        self.checkpoint = None
        self.pipeline = PipelineParams()
        self.recording = False
        self.record_budget = None  # ticks left to record, None = unlimited
        self.buffer = []
        self.terminal = None
        self.latest_action = DEFAULT_ACTION
        self.out_seq = 0
        self.tick_task = None
        self.frame_slot = None
        self.frame_ready = asyncio.Event()

    # -- outbound -----------------------------------------------------------

    async def send(self, msg):
        self.out_seq += 1
        msg["seq"] = self.out_seq
        await self.ws.send(json.dumps(msg, sort_keys=True))

    async def sender_loop(self):
        while True:
            await self.frame_ready.wait()
            self.frame_ready.clear()
            if self.frame_slot is not None:
                msg, self.frame_slot = self.frame_slot, None
                await self.send(msg)

    def post_frame(self, msg):
        self.frame_slot = msg  # overwrite: latest wins
        self.frame_ready.set()

    # -- simulation ---------------------------------------------------------

    def start(self, msg):
        name = msg.get("track", "oval")
        try:
            self.track = simworld.make_track(name)
        except ValueError:
            raise ServiceError("bad-track", f"unknown track {name!r}")
        style = msg.get("style", "sim")
        if style not in ("sim", "real"):
            raise ServiceError("bad-style", f"unknown style {style!r}")
        mode = msg.get("mode", "teleop")
        if mode not in ("teleop", "policy"):
            raise ServiceError("bad-mode", f"unknown mode {mode!r}")
        if mode == "policy":
            path = msg.get("model")
            if not path:
                raise ServiceError("bad-model", "policy mode needs a model")
            try:
                self.checkpoint = trainer.load_checkpoint(path)
            except (OSError, ValueError) as e:
                raise ServiceError("bad-model", str(e))
            self.pipeline = self.checkpoint.pipeline
        self.style = style
        self.seed = int(msg.get("seed", 0))
        self.state = simworld.start_state(self.track)
        self.mode = mode
        self.terminal = None
        self.buffer = []
        self.latest_action = DEFAULT_ACTION
        self.tick_task = asyncio.get_running_loop().create_task(self.tick_loop())

    def stop(self):
        if self.tick_task:
            self.tick_task.cancel()
            self.tick_task = None
        self.mode = "idle"

    async def tick_loop(self):
        period = 1.0 / TICK_HZ
        loop = asyncio.get_running_loop()
        next_tick = loop.time()
        t = 0
        while self.terminal is None:
            frame = simworld.render_camera(self.state, self.track,
                                           style=self.style,
                                           episode_seed=self.seed)
            if self.mode == "policy":
                action = predict(self.checkpoint, frame).action
            else:
                action = self.latest_action
            self.state = simworld.step_vehicle(self.state, action, self.track)
            rew = simworld.reward(self.state, self.track)
            if self.state.lap_count >= 1:
                self.terminal = "lap-complete"
            elif simworld.off_track(self.state, self.track):
                self.terminal = "off-track"
            if self.recording:
                self.buffer.append(data.Step(
                    t=t, action=action, reward=rew, frame=frame,
                    state=self.state.to_dict()))
                if self.record_budget is not None:
                    self.record_budget -= 1
                    if self.record_budget <= 0:
                        self.recording = False
                        self.record_budget = None
            edge = preprocess(frame, self.pipeline)
            edge8 = (edge * 255 if edge.dtype == np.uint8
                     else np.rint(edge * 255)).astype(np.uint8)
            msg = {
                "type": "frame", "t": t,
                "width": frame.shape[1], "height": frame.shape[0],
                "pixels": base64.b64encode(frame.tobytes()).decode("ascii"),
                "edge": base64.b64encode(edge8.tobytes()).decode("ascii"),
                "state": {
                    "x": self.state.x, "y": self.state.y,
                    "heading": self.state.heading,
                    "progress": self.state.arc_progress / self.track.length,
                    "reward": rew,
                },
            }
            if self.terminal:
                msg["terminal"] = self.terminal
            self.post_frame(msg)
            t += 1
            next_tick += period
            delay = next_tick - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_tick = loop.time()  # fell behind; do not burst
        self.mode = "idle"

    def save(self, path):
        if not self.buffer:
            raise ServiceError("no-recording", "nothing recorded")
        header = {
            "track": self.track.name, "style": self.style,
            "width": 160, "height": 120, "dt": 1.0 / TICK_HZ,
            "policy": "teleop" if self.mode != "policy" else "model",
            "seed": self.seed,
        }
        ep = data.Episode(header=header, steps=list(self.buffer),
                          terminal=self.terminal or "timeout")
        data.write_episode(ep, path)
        return len(ep.steps)


class ServiceError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


async def handle_message(session, raw):
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError:
        raise ServiceError("bad-json", "message is not valid JSON")
    mtype = msg.get("type")
    if mtype == "start":
        if session.mode != "idle":
            session.stop()
        session.start(msg)
    elif mtype == "action":
        a = msg.get("action")
        if not isinstance(a, int) or not 0 <= a < 5:
            raise ServiceError("bad-action", f"action {a!r} out of range")
        if session.mode != "teleop":
            raise ServiceError("bad-mode", "actions only apply in teleop mode")
        session.latest_action = a
    elif mtype == "stop":
        session.stop()
    elif mtype == "record":
        on = msg.get("on")
        if not isinstance(on, bool):
            raise ServiceError("bad-record", "record needs boolean 'on'")
        if on and session.mode == "idle":
            raise ServiceError("bad-mode", "cannot record while idle")
        ticks = msg.get("ticks")
        if ticks is not None and (not isinstance(ticks, int) or ticks < 1):
            raise ServiceError("bad-record", "ticks must be a positive integer")
        session.recording = on
        session.record_budget = ticks if on else None
    elif mtype == "save":
        path = msg.get("path")
        if not path:
            raise ServiceError("bad-save", "save needs a path")
        n = session.save(path)
        return {"type": "ack", "of": mtype, "steps": n,
                "client_seq": msg.get("seq")}
    else:
        raise ServiceError("bad-type", f"unknown message type {mtype!r}")
    return {"type": "ack", "of": mtype, "client_seq": msg.get("seq")}


async def handler(ws):
    session = Session(ws)
    sender = asyncio.get_running_loop().create_task(session.sender_loop())
    try:
        async for raw in ws:
            try:
                reply = await handle_message(session, raw)
            except ServiceError as e:
                reply = {"type": "error", "code": e.code, "message": str(e)}
            await session.send(reply)
    finally:
        session.stop()
        sender.cancel()


async def serve_async(port, ready=None):
    import websockets
    async with websockets.serve(handler, "127.0.0.1", port, max_size=2 ** 22):
        if ready is not None:
            ready.set()
        await asyncio.Future()


def serve(port=8700):
    """Run the service until interrupted."""
    print(f"edgeracer service listening on ws://127.0.0.1:{port}")
    try:
        asyncio.run(serve_async(port))
    except KeyboardInterrupt:
        pass
