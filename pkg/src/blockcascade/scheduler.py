"""Cascade scheduling state machine.

Blocks enter the pipeline staggered by ``offset`` passes and then advance one
pass per iteration until they retire through their cache pass.  The schedule
is a pure function of (total blocks, passes, offset): worker count never
changes what is planned, only how entries are spread over executors.

Plans traverse three phases: fill (width growing), steady (width at its
maximum, admissions ongoing), drain (last block admitted, width shrinking).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .core import TimestepSchedule
from .denoiser import renoise
from .errors import ContractViolation

PHASE_FILL = "fill"
PHASE_STEADY = "steady"
PHASE_DRAIN = "drain"
PHASE_DONE = "done"


@dataclass(frozen=True)
class PlanEntry:
    block_index: int
    pass_index: int
    noise_level: float
    worker: int


@dataclass(frozen=True)
class BatchPlan:
    iteration: int
    entries: tuple[PlanEntry, ...]

    @property
    def width(self) -> int:
        return len(self.entries)

    @property
    def blocks(self) -> list[int]:
        return [e.block_index for e in self.entries]


@dataclass
class CascadeState:
    """Mutable bookkeeping for one session: which blocks are in flight and
    how many passes each has completed."""

    num_blocks: int
    offset: int
    schedule: TimestepSchedule
    workers: int = 1
    lead: int = 0
    completed: dict[int, int] = field(default_factory=dict)
    iteration: int = 0
    emitted: list[int] = field(default_factory=list)
    retired: int = 0

    def __post_init__(self):
        if not self.completed and self.retired == 0:
            self.completed = {0: 0}

    @property
    def in_flight(self) -> list[int]:
        return sorted(self.completed)

    @property
    def depth(self) -> int:
        return max(len(self.completed) - 1, 0)

    @property
    def done(self) -> bool:
        return self.retired >= self.num_blocks

    @property
    def max_width(self) -> int:
        return min(math.ceil(self.schedule.passes / self.offset), self.num_blocks)

    @property
    def phase(self) -> str:
        """Phase of the next iteration to be planned."""
        if self.done:
            return PHASE_DONE
        t = self.iteration
        if t >= (self.num_blocks - 1) * self.offset:
            return PHASE_DRAIN
        passes = self.schedule.passes
        width = sum(
            1 for k in range(self.num_blocks)
            if k * self.offset <= t < k * self.offset + passes
        )
        return PHASE_STEADY if width == self.max_width else PHASE_FILL

    def _admit(self) -> None:
        if not self.completed:
            # offset == passes: the youngest block retired before its
            # successor was due; start the successor now.
            if self.lead < self.num_blocks:
                self.completed[self.lead] = 0
            return
        youngest = max(self.completed)
        if youngest + 1 < self.num_blocks and self.completed[youngest] == self.offset:
            self.completed[youngest + 1] = 0

    def to_snapshot(self) -> str:
        """Resumable snapshot (block and pass indices plus schedule position)
        as a JSON document."""
        return json.dumps(
            {
                "num_blocks": self.num_blocks,
                "offset": self.offset,
                "denoise_levels": list(self.schedule.denoise_levels),
                "workers": self.workers,
                "lead": self.lead,
                "completed": {str(k): v for k, v in self.completed.items()},
                "iteration": self.iteration,
                "emitted": self.emitted,
                "retired": self.retired,
            },
            sort_keys=True,
        )

    @classmethod
    def from_snapshot(cls, text: str) -> "CascadeState":
        doc = json.loads(text)
        state = cls(
            num_blocks=doc["num_blocks"],
            offset=doc["offset"],
            schedule=TimestepSchedule(tuple(doc["denoise_levels"])),
            workers=doc["workers"],
            lead=doc["lead"],
            completed={int(k): v for k, v in doc["completed"].items()},
            iteration=doc["iteration"],
            emitted=list(doc["emitted"]),
            retired=doc["retired"],
        )
        return state


def plan_iteration(state: CascadeState, workers: int | None = None) -> BatchPlan:
    """Plan the next iteration: one entry per in-flight block, newest block at
    the noisiest level, admitting the next block once the youngest has
    completed exactly ``offset`` passes."""
    if state.done:
        raise ContractViolation("plan requested after the cascade finished")
    state._admit()
    workers = state.workers if workers is None else workers
    entries = []
    for i, block in enumerate(state.in_flight):
        p = state.completed[block]
        entries.append(PlanEntry(
            block_index=block,
            pass_index=p,
            noise_level=state.schedule.level_for_pass(p),
            worker=i % workers,
        ))
    return BatchPlan(iteration=state.iteration, entries=tuple(entries))


def advance(state: CascadeState, plan: BatchPlan, result_blocks=None) -> list[int]:
    """Advance the pass counters after a planned iteration executed.

    ``result_blocks``, when given, must list the block indices that produced
    results in plan order.  Returns the block indices emitted this iteration.
    """
    if result_blocks is not None and list(result_blocks) != plan.blocks:
        raise ContractViolation(
            f"results {list(result_blocks)} do not match plan {plan.blocks}"
        )
    if plan.iteration != state.iteration:
        raise ContractViolation(
            f"plan for iteration {plan.iteration} applied at {state.iteration}"
        )
    emitted = []
    for entry in plan.entries:
        state.completed[entry.block_index] += 1
        if entry.pass_index == state.schedule.emit_pass:
            emitted.append(entry.block_index)
            state.emitted.append(entry.block_index)
        elif entry.pass_index == state.schedule.cache_pass:
            del state.completed[entry.block_index]
            state.retired += 1
            state.lead = entry.block_index + 1
    state.iteration += 1
    return emitted


def apply_results(state: CascadeState, plan: BatchPlan, outputs, noise_stream,
                  pool, latents: dict, finalized: dict):
    """Fold one iteration's forward results back into the session.

    For each plan entry: denoise passes renoise the clean prediction to the
    next level with counter-keyed noise; the last denoise pass finalizes the
    block into ``finalized`` (and keeps the clean latents as input for the
    cache pass); the cache pass inserts the block's KV into the pool and
    retires it.  ``latents`` maps in-flight blocks to their current (S, D)
    state and is updated in place.

    Returns ``(pool', emitted_blocks)``.
    """
    outputs = list(outputs)
    if [o.block_index for o in outputs] != plan.blocks:
        raise ContractViolation(
            f"results {[o.block_index for o in outputs]} do not match plan {plan.blocks}"
        )
    schedule = state.schedule
    for entry, out in zip(plan.entries, outputs):
        block = entry.block_index
        size = out.x0.shape[0]
        if entry.pass_index < schedule.emit_pass:
            next_level = schedule.level_for_pass(entry.pass_index + 1)
            eps = noise_stream.block_noise(block, entry.pass_index + 1,
                                           block * size, size)
            latents[block] = renoise(out.x0, eps, next_level)
        elif entry.pass_index == schedule.emit_pass:
            finalized[block] = out.x0
            latents[block] = out.x0   # zero-noise input for the cache pass
        else:
            pool = pool.insert(block, out.kv)
            latents.pop(block, None)
    emitted = advance(state, plan, plan.blocks)
    return pool, emitted
