"""Streaming service and session lifecycle.

Service events are a pure projection of the trace: every iteration yields a
``metrics`` event, emissions add a ``block`` event carrying the decoded
pixels (base64 float32) and instantaneous FPS, switches add a ``switch``
event, and the stream closes with ``done``.  Replaying a finished trace
through :func:`events_from_trace` reproduces the live stream byte-for-byte.

Late subscribers receive a replay of the block events so far, then the live
tail; events carry a ``seq`` index so reconnects are idempotent.
"""

from __future__ import annotations

import base64
import json
import threading
import uuid
from dataclasses import dataclass

import numpy as np

from .config import CascadeConfig, config_from_mapping
from .engine import DEFAULT_SESSION_SEED, DEFAULT_WEIGHT_SEED, run_cascade
from .errors import CascadeError, InvalidInputError
from .executor import decode_block, make_decode_map
from .interactive import CommandQueue, LiveSwitchRequest
from .metrics import Trace, TraceEvent

STATUS_RUNNING = "running"
STATUS_DRAINING = "draining"
STATUS_DONE = "done"
STATUS_FAILED = "failed"


def _encode_pixels(pixels: np.ndarray) -> dict:
    data = np.ascontiguousarray(pixels, dtype="<f4")
    return {
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
        "shape": list(data.shape),
        "dtype": "float32",
    }


def _dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


class TraceProjector:
    """Incremental trace -> event-stream projection.

    Feed it trace events (plus the emitted latents, when any) in order; it
    returns the JSON event lines for that iteration.  The projection carries
    no wall-clock fields, so live and replayed streams are byte-identical.
    """

    def __init__(self, config: CascadeConfig, weight_seed: int = DEFAULT_WEIGHT_SEED):
        self.config = config
        self.decode_map = make_decode_map(config.pixel_dim, config.latent_dim,
                                          config.video_frames_per_latent,
                                          seed=weight_seed)
        self.seq = 0
        self.last_emission_clock = 0.0
        self.blocks_emitted = 0

    def _next_seq(self) -> int:
        seq = self.seq
        self.seq += 1
        return seq

    def feed(self, event: TraceEvent, emitted_latents: np.ndarray | None) -> list[str]:
        lines = []
        if event.switch is not None:
            lines.append(_dumps({
                "type": "switch",
                "seq": self._next_seq(),
                **event.switch,
            }))
        lines.append(_dumps({
            "type": "metrics",
            "seq": self._next_seq(),
            "iteration": event.iteration,
            "entries": event.entries,
            "modeled_exec": event.modeled_exec,
            "modeled_comm": event.modeled_comm,
            "modeled_stall": event.modeled_stall,
            "modeled_clock": event.modeled_clock,
            "pool_blocks": event.pool_blocks,
            "pool_frames": event.pool_frames,
            "phase_width": len(event.entries),
        }))
        if event.emitted_block is not None:
            if emitted_latents is None:
                raise CascadeError("emission event without latents")
            elapsed = event.modeled_clock - self.last_emission_clock
            self.last_emission_clock = event.modeled_clock
            pixels = decode_block(emitted_latents, self.decode_map,
                                  self.config.video_frames_per_latent)
            self.blocks_emitted += 1
            lines.append(_dumps({
                "type": "block",
                "seq": self._next_seq(),
                "index": event.emitted_block,
                "video_frames": event.emitted_video_frames,
                "elapsed": elapsed,
                "fps": event.emitted_video_frames / elapsed,
                "pixels": _encode_pixels(pixels),
            }))
        return lines

    def finish(self, trace: Trace) -> str:
        doc = {
            "type": "done",
            "seq": self._next_seq(),
            "blocks": self.blocks_emitted,
            "iterations": len(trace.events),
            "total_modeled_time": trace.total_modeled_time,
            "total_passes": trace.total_passes,
        }
        return _dumps(doc)


def events_from_trace(trace: Trace, config: CascadeConfig, outputs: dict,
                      weight_seed: int = DEFAULT_WEIGHT_SEED) -> list[str]:
    """Project a complete trace into the full event stream (replay path)."""
    projector = TraceProjector(config, weight_seed=weight_seed)
    lines = []
    for event in trace.events:
        latents = outputs.get(event.emitted_block) if event.emitted_block is not None else None
        lines.extend(projector.feed(event, latents))
    lines.append(projector.finish(trace))
    return lines


class EventLog:
    """Append-only event log with bounded replay.

    The replay buffer keeps only block events (bounded by the block count);
    subscribers joining late get those first, then the live tail.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._replay: list[str] = []
        self._buffers: list[list[str]] = []
        self._waiters: set[threading.Event] = set()
        self._closed = False

    def publish(self, line: str) -> None:
        doc = json.loads(line)
        with self._lock:
            if doc.get("type") == "block":
                self._replay.append(line)
            for buffer in self._buffers:
                buffer.append(line)
            waiters = list(self._waiters)
        for waiter in waiters:
            waiter.set()

    def close(self) -> None:
        with self._lock:
            self._closed = True
            waiters = list(self._waiters)
        for waiter in waiters:
            waiter.set()

    def subscribe(self):
        """Yield replayed block events, then live events until closed."""
        buffer: list[str] = []
        waiter = threading.Event()
        with self._lock:
            buffer.extend(self._replay)
            self._buffers.append(buffer)
            self._waiters.add(waiter)
        cursor = 0
        try:
            while True:
                with self._lock:
                    chunk = buffer[cursor:]
                    cursor += len(chunk)
                    closed = self._closed
                    if not chunk and not closed:
                        waiter.clear()
                for line in chunk:
                    yield line
                if closed and cursor == len(buffer):
                    return
                if not chunk:
                    waiter.wait(timeout=0.5)
        finally:
            with self._lock:
                self._buffers.remove(buffer)
                self._waiters.discard(waiter)


@dataclass
class Session:
    id: str
    config: CascadeConfig
    prompt: str
    session_seed: int
    weight_seed: int
    log: EventLog
    queue: CommandQueue
    status: str = STATUS_RUNNING
    error: str | None = None
    blocks_emitted: int = 0
    thread: threading.Thread | None = None
    result: object = None

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "status": self.status,
            "prompt": self.prompt,
            "blocks_emitted": self.blocks_emitted,
            "total_blocks": self.config.num_blocks,
            "error": self.error,
        }


class SessionManager:
    """Owns the generation loops; one daemon thread per session."""

    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, config: CascadeConfig, prompt: str,
               session_seed: int = DEFAULT_SESSION_SEED,
               weight_seed: int = DEFAULT_WEIGHT_SEED,
               pace_seconds: float = 0.0, start: bool = True) -> Session:
        config.validate()
        if not prompt:
            raise InvalidInputError("prompt must be a non-empty string")
        session = Session(
            id=uuid.uuid4().hex,
            config=config,
            prompt=prompt,
            session_seed=session_seed,
            weight_seed=weight_seed,
            log=EventLog(),
            queue=CommandQueue(),
        )

        projector = TraceProjector(config, weight_seed=weight_seed)

        def sink(event: TraceEvent, latents):
            for line in projector.feed(event, latents):
                session.log.publish(line)
            if event.emitted_block is not None:
                session.blocks_emitted += 1
            drained = event.iteration >= (config.num_blocks - 1) * config.offset
            session.status = STATUS_DRAINING if drained else STATUS_RUNNING

        def loop():
            try:
                result = run_cascade(
                    config, prompt, session_seed=session_seed,
                    weight_seed=weight_seed, command_queue=session.queue,
                    event_sink=sink, pace_seconds=pace_seconds)
                session.result = result
                session.log.publish(projector.finish(result.trace))
                session.status = STATUS_DONE
            except Exception as exc:  # surfaced through the status endpoint
                session.status = STATUS_FAILED
                session.error = str(exc)
                session.queue.reject_all(exc)
            finally:
                session.log.close()

        session.thread = threading.Thread(target=loop, daemon=True)
        with self._lock:
            self._sessions[session.id] = session
        if start:
            session.thread.start()
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(session_id)
            return self._sessions[session_id]

    def switch(self, session_id: str, prompt: str, mode: str):
        session = self.get(session_id)
        if session.status in (STATUS_DONE, STATUS_FAILED):
            raise InvalidInputError("session already finished")
        request = LiveSwitchRequest(prompt, mode)
        session.queue.submit(request)
        return request.wait(timeout=60.0)


def create_app(manager: SessionManager | None = None):
    """FastAPI application exposing the session endpoints.

    POST /sessions           create; body {prompt, config?, session_seed?, ...}
    GET  /sessions/{id}      status snapshot
    POST /sessions/{id}/prompt   queue a switch; ack carries the boundary
    GET  /sessions/{id}/events   server-push stream (SSE, data: <json>)
    """
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import StreamingResponse

    app = FastAPI(title="blockcascade")
    app.state.manager = manager or SessionManager()

    def _get_session(session_id: str) -> Session:
        try:
            return app.state.manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        prompt = body.get("prompt", "")
        default_pace = getattr(app.state, "pace_seconds", 0.0)
        try:
            if body.get("config"):
                config = config_from_mapping(body["config"])
            else:
                config = getattr(app.state, "default_config", None) or CascadeConfig()
            session = app.state.manager.create(
                config, prompt,
                session_seed=int(body.get("session_seed", DEFAULT_SESSION_SEED)),
                weight_seed=int(body.get("weight_seed", DEFAULT_WEIGHT_SEED)),
                pace_seconds=float(body.get("pace_seconds", default_pace)),
            )
        except InvalidInputError as exc:
            raise HTTPException(status_code=400,
                                detail={"error": str(exc), "fields": exc.fields})
        return {"id": session.id}

    @app.get("/sessions/{session_id}")
    def session_status(session_id: str):
        return _get_session(session_id).snapshot()

    @app.post("/sessions/{session_id}/prompt")
    def control_switch(session_id: str, body: dict):
        session = _get_session(session_id)
        try:
            event = app.state.manager.switch(
                session.id, body.get("prompt", ""), body.get("mode", "cascade"))
        except InvalidInputError as exc:
            status = 409 if "finished" in str(exc) else 400
            raise HTTPException(status_code=status,
                                detail={"error": str(exc), "fields": exc.fields})
        return event.to_dict()

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str):
        session = _get_session(session_id)

        def sse():
            for line in session.log.subscribe():
                yield f"data: {line}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    return app
