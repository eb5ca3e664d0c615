"""Session loops: the cascaded pipeline and the sequential block-causal
reference it is checked against.

Both consume the same counter-keyed noise stream and the same forward
kernels, so at offset = passes the cascade reproduces the reference
bit-for-bit; at lower offsets blocks overlap in flight and the schedule
compresses to (B - 1) * offset + passes iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import CascadeConfig
from .core import Conditioning, NoiseStream, embed_prompt
from .denoiser import EntryInput, ModelWeights, build_mask, forward, init_model, renoise
from .errors import ContractViolation, InvalidInputError
from .executor import CostModel, WorkerPool, execute
from .interactive import CommandQueue, SwitchEvent, SwitchSpec
from .kvpool import KVPool, recache
from .metrics import Trace, TraceEvent
from .scheduler import CascadeState, apply_results, plan_iteration

DEFAULT_SESSION_SEED = 20260809
DEFAULT_WEIGHT_SEED = 7


@dataclass
class RunResult:
    outputs: dict[int, np.ndarray]      # block index -> emitted (S, D) latents
    trace: Trace
    pool: KVPool
    emitted_order: list[int]
    switch_events: list[SwitchEvent] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace.events)

    def stacked_outputs(self) -> np.ndarray:
        return np.concatenate([self.outputs[k] for k in sorted(self.outputs)])


class _Clock:
    def __init__(self):
        self.modeled = 0.0
        self.wall = 0.0
        self.decode_done = 0.0


def _normalize_switches(switches, config: CascadeConfig):
    by_iteration = {}
    schedule = config.schedule()
    for spec in switches or ():
        if spec.at_block is not None and not 0 <= spec.at_block < config.num_blocks:
            raise InvalidInputError(
                f"switch block {spec.at_block} outside run of {config.num_blocks} blocks"
            )
        boundary = spec.boundary_iteration(config.offset, schedule.emit_pass)
        if boundary in by_iteration:
            raise InvalidInputError(f"two switches scripted for iteration {boundary}")
        by_iteration[boundary] = spec
    return by_iteration


def run_cascade(config: CascadeConfig, prompt: str,
                session_seed: int = DEFAULT_SESSION_SEED,
                weight_seed: int = DEFAULT_WEIGHT_SEED,
                switches=(), command_queue: CommandQueue | None = None,
                event_sink=None, weights: ModelWeights | None = None,
                pace_seconds: float = 0.0) -> RunResult:
    """Drive plan / execute / apply to completion.

    Outputs are a pure function of (config minus workers, seeds, prompt
    schedule): the worker count only spreads batch entries over executors.
    ``event_sink``, when given, receives ``(trace_event, emitted_latents)``
    after every iteration.
    """
    config.validate()
    if config.decode_overlap and config.workers < 2:
        raise InvalidInputError("decode overlap needs at least 2 workers",
                                fields=["decode_overlap", "workers"])
    schedule = config.schedule()
    if weights is None:
        weights = init_model(weight_seed, config.layers, config.heads,
                             config.latent_dim, config.cond_dim)
    conditioning = embed_prompt(prompt, config.cond_dim)
    noise = NoiseStream(session_seed, config.latent_dim)
    cost = CostModel.from_config(config)
    pool = KVPool.empty(config.window_blocks, config.sink_blocks)
    state = CascadeState(num_blocks=config.num_blocks, offset=config.offset,
                         schedule=schedule, workers=config.workers)
    scripted = _normalize_switches(switches, config)
    latents: dict[int, np.ndarray] = {}
    finalized: dict[int, np.ndarray] = {}
    trace = Trace(meta={
        "kind": "cascade",
        "prompt": prompt,
        "session_seed": session_seed,
        "weight_seed": weight_seed,
        "config": config.to_dict(),
    })
    clock = _Clock()
    switch_events: list[SwitchEvent] = []

    with WorkerPool(config.workers) as workers:
        while not state.done:
            switch_record = None
            spec = scripted.pop(state.iteration, None)
            live = None
            if spec is None and command_queue is not None:
                live = command_queue.pop()
                if live is not None:
                    spec = SwitchSpec(prompt=live.prompt, mode=live.mode,
                                      at_iteration=state.iteration)
            if spec is not None:
                conditioning, pool, event = _apply_switch(
                    spec, state, config, weights, conditioning, pool,
                    finalized, cost, clock)
                switch_events.append(event)
                switch_record = event.to_dict()
                if live is not None:
                    live.resolve(event)

            plan = plan_iteration(state)
            for entry in plan.entries:
                if entry.pass_index == 0 and entry.block_index not in latents:
                    latents[entry.block_index] = noise.block_noise(
                        entry.block_index, 0,
                        entry.block_index * config.block_size, config.block_size)
            entries = [
                EntryInput(block_index=e.block_index, latents=latents[e.block_index],
                           noise_level=e.noise_level, conditioning=conditioning)
                for e in plan.entries
            ]
            mask = build_mask(plan.blocks, pool.block_indices,
                              config.attention_mode, config.block_size)
            visible = [pool.get(b) for b in pool.block_indices]
            pre_pool = pool
            result = execute(plan, entries, visible, mask, weights, workers,
                             cost, config.attention_mode)
            pool, emitted = apply_results(state, plan, result.outputs, noise,
                                          pool, latents, finalized)

            emitted_block = emitted[0] if emitted else None
            decode_charge = 0.0
            decode_start = decode_done = None
            if emitted_block is not None and cost.decode > 0.0:
                if config.decode_overlap:
                    decode_start = max(clock.modeled + result.modeled_exec
                                       + result.modeled_comm, clock.decode_done)
                    decode_done = decode_start + cost.decode_cost()
                    clock.decode_done = decode_done
                else:
                    decode_charge = cost.decode_cost()
            stall = switch_record["stall_modeled"] if switch_record else 0.0
            iteration_modeled = stall + result.modeled_exec + result.modeled_comm \
                + decode_charge
            clock.modeled += iteration_modeled
            clock.wall += result.wall_seconds

            event = TraceEvent(
                iteration=plan.iteration,
                entries=[
                    {
                        "block": t.block_index,
                        "pass_index": t.pass_index,
                        "noise_level": plan.entries[i].noise_level,
                        "worker": t.worker,
                        "conditioning_id": conditioning.id,
                        "queries": config.block_size,
                        "visible_frames": t.visible_frames,
                        "modeled_cost": t.modeled_cost,
                    }
                    for i, t in enumerate(result.timings)
                ],
                wall_seconds=result.wall_seconds,
                modeled_exec=result.modeled_exec,
                modeled_comm=result.modeled_comm,
                modeled_stall=stall,
                modeled_decode=decode_charge,
                modeled_clock=clock.modeled,
                wall_clock=clock.wall,
                pool_blocks=len(pre_pool.block_indices),
                pool_frames=pre_pool.frame_count(),
                pool_state=pre_pool.state_dump(),
                emitted_block=emitted_block,
                emitted_video_frames=(config.block_size * config.video_frames_per_latent
                                      if emitted_block is not None else None),
                decode_start=decode_start,
                decode_done=decode_done,
                switch=switch_record,
            )
            trace.append(event)
            if event_sink is not None:
                event_sink(event, finalized.get(emitted_block) if emitted_block is not None else None)
            if pace_seconds > 0.0:
                time.sleep(pace_seconds)

    if command_queue is not None:
        command_queue.reject_all(InvalidInputError("session already finished"))
    if sorted(finalized) != list(range(config.num_blocks)):
        raise ContractViolation(
            f"run finished with outputs for {sorted(finalized)}; "
            f"expected all of 0..{config.num_blocks - 1}"
        )
    return RunResult(outputs=finalized, trace=trace, pool=pool,
                     emitted_order=list(state.emitted),
                     switch_events=switch_events)


def _apply_switch(spec: SwitchSpec, state: CascadeState, config: CascadeConfig,
                  weights: ModelWeights, conditioning: Conditioning,
                  pool: KVPool, finalized: dict, cost: CostModel, clock: _Clock):
    """Swap conditioning at an iteration boundary; recache mode additionally
    rebuilds the pool under the new prompt and pays the stall for it."""
    new_conditioning = embed_prompt(spec.prompt, config.cond_dim)
    extra = 0
    stall = 0.0
    wall0 = time.perf_counter()
    if spec.mode == "recache":
        result = recache(pool, new_conditioning, weights, finalized)
        pool = result.pool
        extra = result.passes
        stall = sum(cost.pass_cost(v) for v in result.visible_frames)
    elif config.refresh_sink_on_switch and pool.sink_indices:
        sink = pool.sink_indices[0]
        keep_window = [b for b in pool.block_indices if b != sink]
        sink_only = KVPool(window=pool.window, sink_blocks=pool.sink_blocks,
                           entries=tuple((b, kv) for b, kv in pool.entries if b == sink))
        result = recache(sink_only, new_conditioning, weights, finalized)
        for b, kv in result.pool.entries:
            pool = pool.insert(b, kv)
        extra = result.passes
        stall = sum(cost.pass_cost(v) for v in result.visible_frames)
    clock.wall += time.perf_counter() - wall0
    event = SwitchEvent(
        iteration=state.iteration,
        boundary_block=state.lead,
        mode=spec.mode,
        extra_passes=extra,
        conditioning_id=new_conditioning.id,
        prompt=spec.prompt,
        stall_modeled=stall,
    )
    return new_conditioning, pool, event


def run_sequential_reference(config: CascadeConfig, prompt: str,
                             session_seed: int = DEFAULT_SESSION_SEED,
                             weight_seed: int = DEFAULT_WEIGHT_SEED,
                             weights: ModelWeights | None = None) -> RunResult:
    """Plain block-causal rollout: each block runs all its passes against the
    cached pool of its predecessors before the next block starts.

    Shares the noise keying and forward kernels with the cascade, so the
    offset-equal-passes cascade must match it exactly; everything else here
    (the loop itself) is written independently of the state machine.
    """
    config.validate()
    schedule = config.schedule()
    if weights is None:
        weights = init_model(weight_seed, config.layers, config.heads,
                             config.latent_dim, config.cond_dim)
    conditioning = embed_prompt(prompt, config.cond_dim)
    noise = NoiseStream(session_seed, config.latent_dim)
    cost = CostModel.from_config(config)
    pool = KVPool.empty(config.window_blocks, config.sink_blocks)
    size = config.block_size
    trace = Trace(meta={
        "kind": "sequential",
        "prompt": prompt,
        "session_seed": session_seed,
        "weight_seed": weight_seed,
        "config": config.to_dict(),
    })
    outputs: dict[int, np.ndarray] = {}
    emitted_order: list[int] = []
    modeled = 0.0
    wall = 0.0
    iteration = 0

    for block in range(config.num_blocks):
        current = noise.block_noise(block, 0, block * size, size)
        for p in range(schedule.passes):
            level = schedule.level_for_pass(p)
            pre_pool = pool
            mask = build_mask([block], pre_pool.block_indices,
                              config.attention_mode, size)
            wall0 = time.perf_counter()
            out = forward(weights, [EntryInput(block, current, level, conditioning)],
                          [pre_pool.get(b) for b in pre_pool.block_indices], mask)[0]
            wall_pass = time.perf_counter() - wall0
            frames = mask.visible_frames(block)
            pass_cost = cost.pass_cost(frames)
            emitted_block = None
            if p < schedule.emit_pass:
                eps = noise.block_noise(block, p + 1, block * size, size)
                current = renoise(out.x0, eps, schedule.level_for_pass(p + 1))
            elif p == schedule.emit_pass:
                outputs[block] = out.x0
                current = out.x0
                emitted_block = block
                emitted_order.append(block)
            else:
                pool = pool.insert(block, out.kv)
            decode_charge = cost.decode_cost() if (emitted_block is not None
                                                   and cost.decode > 0.0) else 0.0
            modeled += pass_cost + decode_charge
            wall += wall_pass
            trace.append(TraceEvent(
                iteration=iteration,
                entries=[{
                    "block": block,
                    "pass_index": p,
                    "noise_level": level,
                    "worker": 0,
                    "conditioning_id": conditioning.id,
                    "queries": size,
                    "visible_frames": frames,
                    "modeled_cost": pass_cost,
                }],
                wall_seconds=wall_pass,
                modeled_exec=pass_cost,
                modeled_comm=0.0,
                modeled_stall=0.0,
                modeled_decode=decode_charge,
                modeled_clock=modeled,
                wall_clock=wall,
                pool_blocks=len(pre_pool.block_indices),
                pool_frames=pre_pool.frame_count(),
                pool_state=pre_pool.state_dump(),
                emitted_block=emitted_block,
                emitted_video_frames=(size * config.video_frames_per_latent
                                      if emitted_block is not None else None),
            ))
            iteration += 1
    return RunResult(outputs=outputs, trace=trace, pool=pool,
                     emitted_order=emitted_order)
