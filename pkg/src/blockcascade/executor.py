"""Multi-worker execution of one batch plan.

Workers are in-process threads standing in for GPUs.  Entries are assigned
round-robin; within a pass the layer stack runs as fork-join phases so that
fresh per-layer KV really crosses worker boundaries through a shared gather
before attention.  Results are bit-identical for any worker count because
every per-entry kernel sees exactly the same inputs either way.

Two clocks are kept: wall time (smoke checks only) and a modeled clock fed by
:class:`CostModel`, which is what all throughput claims are measured on.
Modeled iteration time is the busiest worker's pass costs plus a term for KV
frames exchanged across workers.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .denoiser import AttentionMask, EntryInput, ModelWeights, forward
from .errors import ContractViolation, InvalidInputError, IterationError


@dataclass(frozen=True)
class CostModel:
    """Modeled time units: pass cost affine in attended key frames, plus
    communication per exchanged KV frame and a flat per-block decode cost."""

    pass_base: float = 1.0
    pass_per_frame: float = 0.0
    comm_per_frame: float = 0.0
    decode: float = 0.0

    def __post_init__(self):
        if min(self.pass_base, self.pass_per_frame, self.comm_per_frame, self.decode) < 0:
            raise InvalidInputError("cost parameters must be non-negative")

    def pass_cost(self, visible_frames: int) -> float:
        return self.pass_base + self.pass_per_frame * visible_frames

    def comm_cost(self, kv_frames: int) -> float:
        return self.comm_per_frame * kv_frames

    def decode_cost(self) -> float:
        return self.decode

    @classmethod
    def from_config(cls, config) -> "CostModel":
        return cls(
            pass_base=config.pass_cost_base,
            pass_per_frame=config.pass_cost_per_frame,
            comm_per_frame=config.comm_cost_per_frame,
            decode=config.decode_cost,
        )


@dataclass(frozen=True)
class EntryTiming:
    block_index: int
    pass_index: int
    worker: int
    visible_frames: int
    modeled_cost: float
    wall_seconds: float


@dataclass(frozen=True)
class IterationResult:
    outputs: list                 # EntryOutput per entry, plan order
    timings: list[EntryTiming]
    modeled_exec: float           # busiest worker's summed pass costs
    modeled_comm: float
    exchanged_frames: int
    wall_seconds: float


class WorkerPool:
    """Fixed pool of worker threads; size 1 short-circuits to inline calls."""

    def __init__(self, workers: int):
        if workers < 1:
            raise InvalidInputError(f"worker count must be >= 1, got {workers}")
        self.workers = workers
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def map(self, fn, items):
        items = list(items)
        if self._pool is None or len(items) <= 1:
            return [fn(item) for item in items]
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def assign_workers(n_entries: int, workers: int) -> list[int]:
    return [i % workers for i in range(n_entries)]


def exchanged_kv_frames(plan_blocks, assignment, mode: str, block_size: int) -> int:
    """KV frames that must cross worker boundaries this iteration.

    Each entry's fresh KV (``block_size`` frames per layer-set) is shipped to
    every distinct other worker hosting an entry that attends to it; in
    causal mode only higher-indexed entries consume it.
    """
    total = 0
    for i, src in enumerate(plan_blocks):
        consumers = set()
        for j, dst in enumerate(plan_blocks):
            if i == j or assignment[i] == assignment[j]:
                continue
            if mode == "bidirectional" or src <= dst:
                consumers.add(assignment[j])
        total += len(consumers) * block_size
    return total


def execute(plan, entries, visible_kv, mask: AttentionMask, weights: ModelWeights,
            pool: WorkerPool, cost_model: CostModel, mode: str) -> IterationResult:
    """Run one iteration's batch.

    ``entries`` are :class:`EntryInput` in plan order; ``visible_kv`` is the
    pool snapshot taken at the iteration barrier (inserts from this iteration
    are applied afterwards by the scheduler, never seen here).
    """
    entries = list(entries)
    if [e.block_index for e in entries] != plan.blocks:
        raise ContractViolation(
            f"entries {[e.block_index for e in entries]} do not match plan {plan.blocks}"
        )
    assignment = assign_workers(len(entries), pool.workers)
    wall0 = time.perf_counter()

    def run(fn, indices):
        def guarded(i):
            try:
                return fn(i)
            except IterationError:
                raise
            except Exception as exc:  # identify the failing entry for the caller
                raise IterationError(
                    f"worker {assignment[i]} failed on block "
                    f"{entries[i].block_index} pass {plan.entries[i].pass_index}: {exc}",
                    block_index=entries[i].block_index,
                    pass_index=plan.entries[i].pass_index,
                ) from exc
        return pool.map(guarded, indices)

    outputs = forward(weights, entries, visible_kv, mask,
                      mapper=lambda fn, items: run(fn, list(items)))
    wall = time.perf_counter() - wall0

    per_worker = [0.0] * pool.workers
    timings = []
    for i, entry in enumerate(entries):
        frames = mask.visible_frames(entry.block_index)
        cost = cost_model.pass_cost(frames)
        per_worker[assignment[i]] += cost
        timings.append(EntryTiming(
            block_index=entry.block_index,
            pass_index=plan.entries[i].pass_index,
            worker=assignment[i],
            visible_frames=frames,
            modeled_cost=cost,
            wall_seconds=wall / len(entries),
        ))
    exchanged = exchanged_kv_frames(plan.blocks, assignment, mode, mask.block_size)
    return IterationResult(
        outputs=outputs,
        timings=timings,
        modeled_exec=max(per_worker),
        modeled_comm=cost_model.comm_cost(exchanged),
        exchanged_frames=exchanged,
        wall_seconds=wall,
    )


def make_decode_map(pixel_dim: int, latent_dim: int, frames_per_latent: int,
                    seed: int = 0) -> np.ndarray:
    """Fixed linear latent->pixel map, (frames_per_latent * pixel_dim, latent_dim),
    constructed full column rank so decoding is injective."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed ^ 0xDEC0DE)))
    mat = rng.standard_normal((frames_per_latent * pixel_dim, latent_dim))
    if np.linalg.matrix_rank(mat) < latent_dim:
        raise ContractViolation("decode map lost column rank")  # pragma: no cover
    return mat


def decode_block(latents: np.ndarray, decode_map: np.ndarray,
                 frames_per_latent: int) -> np.ndarray:
    """Expand (S, D) block latents into (S * frames_per_latent, pixel_dim)
    video frames through the fixed linear map."""
    s, d = latents.shape
    if decode_map.ndim != 2 or decode_map.shape[1] != d \
            or decode_map.shape[0] % frames_per_latent != 0:
        raise ContractViolation(
            f"decode map {decode_map.shape} incompatible with latents {latents.shape}"
        )
    pixel_dim = decode_map.shape[0] // frames_per_latent
    flat = latents @ decode_map.T   # (S, frames_per_latent * pixel_dim)
    return flat.reshape(s * frames_per_latent, pixel_dim)
