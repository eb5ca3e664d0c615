"""Trace capture and throughput analytics.

Every iteration appends one :class:`TraceEvent`.  Instantaneous FPS is the
video frames of an emitted block divided by the modeled time since the
previous emission; streaming FPS is the paper-style steady-state summary:
the mean instantaneous FPS of the 8th and 9th emitted blocks (1-indexed),
conventionally measured on a 13-block run.

Traces export losslessly to JSON lines (one event per line); the FPS series
exports to CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

from .errors import ContractViolation, InvalidInputError


@dataclass
class TraceEvent:
    iteration: int
    entries: list            # per pass: block, pass_index, noise_level, worker,
                              # conditioning_id, queries, visible_frames, modeled_cost
    wall_seconds: float
    modeled_exec: float
    modeled_comm: float
    modeled_stall: float
    modeled_decode: float
    modeled_clock: float      # cumulative modeled time at iteration end
    wall_clock: float         # cumulative wall time at iteration end
    pool_blocks: int
    pool_frames: int
    pool_state: list
    emitted_block: int | None = None
    emitted_video_frames: int | None = None
    decode_start: float | None = None   # overlap lane only
    decode_done: float | None = None
    switch: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        return cls(**json.loads(line))


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, event: TraceEvent) -> None:
        if self.events and event.iteration <= self.events[-1].iteration:
            raise ContractViolation(
                f"trace iterations must strictly increase "
                f"({event.iteration} after {self.events[-1].iteration})"
            )
        self.events.append(event)

    @property
    def total_modeled_time(self) -> float:
        if not self.events:
            return 0.0
        clock = self.events[-1].modeled_clock
        decode_done = max((e.decode_done for e in self.events if e.decode_done is not None),
                          default=0.0)
        return max(clock, decode_done)

    @property
    def total_wall_time(self) -> float:
        return self.events[-1].wall_clock if self.events else 0.0

    @property
    def emissions(self) -> list[TraceEvent]:
        return [e for e in self.events if e.emitted_block is not None]

    @property
    def total_passes(self) -> int:
        return sum(len(e.entries) for e in self.events)

    @property
    def extra_passes(self) -> int:
        return sum(e.switch["extra_passes"] for e in self.events if e.switch)


@dataclass(frozen=True)
class FpsPoint:
    block_index: int
    video_frames: int
    elapsed: float
    fps: float


@dataclass(frozen=True)
class FpsSeries:
    points: tuple[FpsPoint, ...]

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def fps_values(self) -> list[float]:
        return [p.fps for p in self.points]


def instantaneous_fps(trace: Trace, clock: str = "modeled") -> FpsSeries:
    """Per emitted block: video frames over the time since the previous
    emission (session start for the first block)."""
    if clock not in ("modeled", "wall"):
        raise InvalidInputError(f"unknown clock {clock!r}")
    emissions = trace.emissions
    if not emissions:
        raise InvalidInputError("trace contains no emitted blocks")
    points = []
    previous = 0.0
    for event in emissions:
        at = event.modeled_clock if clock == "modeled" else event.wall_clock
        elapsed = at - previous
        previous = at
        points.append(FpsPoint(
            block_index=event.emitted_block,
            video_frames=event.emitted_video_frames,
            elapsed=elapsed,
            fps=event.emitted_video_frames / elapsed,
        ))
    return FpsSeries(points=tuple(points))


STREAMING_FPS_BLOCKS = (8, 9)   # 1-indexed emitted blocks averaged
STREAMING_FPS_RUN_BLOCKS = 13   # conventional run length


def streaming_fps(trace: Trace, clock: str = "modeled") -> float:
    """Steady-state FPS: mean instantaneous FPS of the 8th and 9th emitted
    blocks (1-indexed), by convention on a 13-block run."""
    series = instantaneous_fps(trace, clock=clock)
    need = max(STREAMING_FPS_BLOCKS)
    if len(series) < need:
        raise InvalidInputError(
            f"streaming FPS needs at least {need} emitted blocks "
            f"(got {len(series)}); run {STREAMING_FPS_RUN_BLOCKS} blocks"
        )
    picked = [series[i - 1].fps for i in STREAMING_FPS_BLOCKS]
    return sum(picked) / len(picked)


def attention_cost(trace: Trace) -> int:
    """Total attended (query frame, key frame) pairs across every planned
    pass; grows linearly with schedule length and is window-bounded per pass."""
    return sum(

        entry["queries"] * entry["visible_frames"]
        for event in trace.events
        for entry in event.entries
    )


def export_trace(trace: Trace, path, format: str = "json-lines") -> None:
    """Write the trace: ``json-lines`` is one event per line (lossless);
    ``csv`` carries the FPS-series columns."""
    if format == "json-lines":
        with open(path, "w", encoding="utf-8") as fh:
            for event in trace.events:
                fh.write(event.to_json() + "\n")
    elif format == "csv":
        series = instantaneous_fps(trace)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block_index", "video_frames", "elapsed", "fps"])
            for p in series.points:
                writer.writerow([p.block_index, p.video_frames,
                                 repr(p.elapsed), repr(p.fps)])
    else:
        raise InvalidInputError(f"unknown trace format {format!r}")


def import_trace(path) -> Trace:
    trace = Trace()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trace.append(TraceEvent.from_json(line))
    return trace


def verify_schedule_consistency(trace: Trace, config) -> None:
    """Replay the trace's plans through a fresh state machine; raise if any
    iteration's planned (block, pass, level) entries differ."""
    from .scheduler import CascadeState, advance, plan_iteration

    state = CascadeState(
        num_blocks=config.num_blocks,
        offset=config.offset,
        schedule=config.schedule(),
        workers=config.workers,
    )
    for event in trace.events:
        plan = plan_iteration(state)
        got = [(e.block_index, e.pass_index, e.noise_level) for e in plan.entries]
        want = [(e["block"], e["pass_index"], e["noise_level"]) for e in event.entries]
        if got != want:
            raise ContractViolation(
                f"iteration {event.iteration}: trace entries {want} != replanned {got}"
            )
        advance(state, plan)
    if not state.done:
        raise ContractViolation("trace ended before the schedule completed")
