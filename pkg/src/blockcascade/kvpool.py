"""Global shared KV pool.

The pool keeps the latest per-layer KV of every retired block, bounded by a
sliding window over block indices plus an optional permanently-retained sink
block.  All operations return a new pool value; snapshots handed to workers
are therefore consistent by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Conditioning
from .denoiser import EntryInput, ModelWeights, build_mask, forward
from .errors import ContractViolation


@dataclass(frozen=True)
class KVPool:
    """Map block index -> per-layer KV, with FIFO eviction over block index.

    ``sink_blocks`` of 1 pins block 0 forever once inserted; at most
    ``window`` non-sink entries are retained (oldest evicted first).
    """

    window: int
    sink_blocks: int
    entries: tuple = ()   # ((block_index, (LayerKV, ...)), ...) ascending

    @classmethod
    def empty(cls, window: int, sink_blocks: int) -> "KVPool":
        return cls(window=window, sink_blocks=sink_blocks)

    def _is_sink(self, block_index: int) -> bool:
        return self.sink_blocks > 0 and block_index == 0

    @property
    def block_indices(self) -> list[int]:
        return [b for b, _ in self.entries]

    @property
    def sink_indices(self) -> list[int]:
        return [b for b, _ in self.entries if self._is_sink(b)]

    def get(self, block_index: int):
        for b, kv in self.entries:
            if b == block_index:
                return kv
        raise KeyError(block_index)

    def insert(self, block_index: int, kv_layers) -> "KVPool":
        """Store (or overwrite) one block's KV, evicting the lowest-indexed
        non-sink entries once more than ``window`` of them accumulate."""
        kv_layers = tuple(kv_layers)
        if any(kv.block_index != block_index for kv in kv_layers):
            raise ContractViolation(
                f"KV tagged for blocks {[kv.block_index for kv in kv_layers]} "
                f"inserted under block {block_index}"
            )
        kept = [(b, kv) for b, kv in self.entries if b != block_index]
        kept.append((block_index, kv_layers))
        kept.sort(key=lambda item: item[0])
        non_sink = [b for b, _ in kept if not self._is_sink(b)]
        while len(non_sink) > self.window:
            victim = non_sink.pop(0)
            kept = [(b, kv) for b, kv in kept if b != victim]
        return KVPool(window=self.window, sink_blocks=self.sink_blocks, entries=tuple(kept))

    def visible_set(self, querying_block: int) -> list:
        """Per-layer KV of every stored strict predecessor of
        ``querying_block``, ascending by block index (sink first)."""
        return [kv for b, kv in self.entries if b < querying_block]

    def frame_count(self) -> int:
        return sum(kv[0].frame_count for _, kv in self.entries)

    def state_dump(self) -> list[dict]:
        """Debug summary (no tensor payloads) for the trace stream."""
        return [
            {
                "block": b,
                "noise_tag": kv[0].noise_tag,
                "conditioning_id": kv[0].conditioning_id,
                "sink": self._is_sink(b),
            }
            for b, kv in self.entries
        ]


def insert(pool: KVPool, block_index: int, kv_layers) -> KVPool:
    return pool.insert(block_index, kv_layers)


def visible_set(pool: KVPool, querying_block: int) -> list:
    return pool.visible_set(querying_block)


def pool_frame_count(pool: KVPool) -> int:
    return pool.frame_count()


@dataclass(frozen=True)
class RecacheResult:
    pool: KVPool
    passes: int                      # forward passes run (= pool size)
    visible_frames: tuple[int, ...]  # attended key frames per pass, for costing


def recache(pool: KVPool, new_conditioning: Conditioning, weights: ModelWeights,
            block_latents: dict) -> RecacheResult:
    """Rebuild every pool entry (sink included) from its clean latents under
    ``new_conditioning``.

    Blocks are reprocessed in ascending order; each forward attends to the
    already-recached predecessors still in the pool, mirroring a block-causal
    cache rebuild.  The pass count is the stall a context switch pays in
    recache mode.
    """
    rebuilt = pool
    passes = 0
    frames = []
    for block_index in pool.block_indices:
        if block_index not in block_latents:
            raise ContractViolation(
                f"recache needs clean latents for pool block {block_index}"
            )
        ctx = rebuilt.visible_set(block_index)
        mask = build_mask([block_index], [kv[0].block_index for kv in ctx],
                          "causal", block_size=block_latents[block_index].shape[0])
        entry = EntryInput(
            block_index=block_index,
            latents=block_latents[block_index],
            noise_level=0.0,
            conditioning=new_conditioning,
        )
        out = forward(weights, [entry], ctx, mask)[0]
        rebuilt = rebuilt.insert(block_index, out.kv)
        passes += 1
        frames.append(mask.visible_frames(block_index))
    return RecacheResult(pool=rebuilt, passes=passes, visible_frames=tuple(frames))
