"""Domain types shared by every other module: timestep schedules, latent
blocks, prompt conditioning, and the counter-based noise stream.

Everything here is an immutable value after construction, so instances can
be handed to concurrent workers without coordination.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

MAX_LEVEL = 1000.0


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimestepSchedule:
    """Descending denoise noise levels plus the trailing zero-noise cache pass.

    A block takes ``passes`` forward evaluations: one per denoise level and a
    final cache pass at level 0 whose KV feeds later blocks.
    """

    denoise_levels: tuple[float, ...]
    cache_level: float = 0.0

    @property
    def passes(self) -> int:
        return len(self.denoise_levels) + 1

    def level_for_pass(self, pass_index: int) -> float:
        """Noise level evaluated by pass ``pass_index`` (0-based)."""
        if pass_index < len(self.denoise_levels):
            return self.denoise_levels[pass_index]
        if pass_index == len(self.denoise_levels):
            return self.cache_level
        raise InvalidInputError(f"pass index {pass_index} out of range for {self.passes} passes")

    @property
    def emit_pass(self) -> int:
        """Pass after which a block's clean prediction is emitted."""
        return len(self.denoise_levels) - 1

    @property
    def cache_pass(self) -> int:
        return len(self.denoise_levels)


def make_schedule(levels) -> TimestepSchedule:
    """Validate ``levels`` (strictly decreasing, within (0, 1000]) and attach
    the zero-noise cache pass."""
    levels = [float(x) for x in levels]
    if not levels:
        raise InvalidInputError("schedule needs at least one denoise level")
    if any(not np.isfinite(x) for x in levels):
        raise InvalidInputError("schedule levels must be finite")
    if levels[0] > MAX_LEVEL or levels[-1] <= 0.0:
        raise InvalidInputError(
            f"denoise levels must lie in (0, {MAX_LEVEL:g}], got {levels}"
        )
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise InvalidInputError(f"denoise levels must be strictly decreasing, got {levels}")
    return TimestepSchedule(denoise_levels=tuple(levels))


@dataclass(frozen=True)
class LatentFrame:
    """One latent frame: a point in R^D tagged with its global index and
    current noise level."""

    frame_index: int
    values: np.ndarray
    noise_level: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError(f"frame {self.frame_index} has non-finite values")


@dataclass(frozen=True)
class Block:
    """A contiguous group of frames denoised together with full internal
    attention.  ``pass_index`` counts completed passes."""

    block_index: int
    frames: tuple[LatentFrame, ...]
    pass_index: int = 0
    conditioning_id: str = ""

    def __post_init__(self):
        size = len(self.frames)
        want = range(self.block_index * size, (self.block_index + 1) * size)
        got = [f.frame_index for f in self.frames]
        if got != list(want):
            raise InvalidInputError(
                f"block {self.block_index} frame indices {got} not contiguous {list(want)}"
            )
        levels = {f.noise_level for f in self.frames}
        if len(levels) > 1:
            raise InvalidInputError(f"block {self.block_index} mixes noise levels {levels}")

    @property
    def noise_level(self) -> float:
        return self.frames[0].noise_level

    @property
    def latents(self) -> np.ndarray:
        """(S, D) matrix of the block's frame values."""
        return np.stack([f.values for f in self.frames])


def block_from_latents(block_index, latents, noise_level, conditioning_id="") -> Block:
    size = latents.shape[0]
    frames = tuple(
        LatentFrame(block_index * size + i, latents[i], noise_level) for i in range(size)
    )
    return Block(block_index, frames, conditioning_id=conditioning_id)


@dataclass(frozen=True)
class Conditioning:
    """Deterministic stand-in for a text encoder: the prompt is hashed and
    expanded into a unit-norm embedding."""

    prompt: str
    embedding: np.ndarray
    id: str

    def __post_init__(self):
        object.__setattr__(self, "embedding", _frozen(self.embedding))


def embed_prompt(prompt: str, cond_dim: int) -> Conditioning:
    """Hash-expand ``prompt`` into a unit-norm vector in R^{cond_dim}.

    Equal prompts always map to equal embeddings and ids.
    """
    if not isinstance(prompt, str) or prompt == "":
        raise InvalidInputError("prompt must be a non-empty string")
    if cond_dim < 1:
        raise InvalidInputError(f"conditioning dim must be >= 1, got {cond_dim}")
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    seed = np.frombuffer(digest[:16], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=seed))
    vec = rng.standard_normal(cond_dim)
    vec /= np.linalg.norm(vec)
    return Conditioning(prompt=prompt, embedding=vec, id=digest.hex()[:16])


@dataclass(frozen=True)
class NoiseStream:
    """Counter-based Gaussian source keyed by (block, pass, frame).

    Each draw builds a fresh Philox generator whose counter is the index
    triple, so the value is a pure function of the key and the session seed:
    any evaluation order, batching, or worker placement sees identical noise.
    """

    session_seed: int
    dim: int

    def draw(self, block_index: int, pass_index: int, frame_index: int) -> np.ndarray:
        if min(block_index, pass_index, frame_index) < 0:
            raise InvalidInputError("noise stream indices must be >= 0")
        bitgen = np.random.Philox(
            key=np.uint64(self.session_seed & 0xFFFFFFFFFFFFFFFF),
            counter=np.array([block_index, pass_index, frame_index, 0], dtype=np.uint64),
        )
        return np.random.Generator(bitgen).standard_normal(self.dim)

    def block_noise(self, block_index: int, pass_index: int, frame0: int, size: int) -> np.ndarray:
        """(size, D) stack of per-frame draws for one block pass."""
        return np.stack(
            [self.draw(block_index, pass_index, frame0 + i) for i in range(size)]
        )


def noise_draw(stream: NoiseStream, block_index: int, pass_index: int, frame_index: int) -> np.ndarray:
    return stream.draw(block_index, pass_index, frame_index)
