"""Desk-scale few-step denoiser.

A fixed-weight stack of attention layers maps a block of noisy latents (plus
positional, noise-level, and conditioning injections) to a clean-latent
prediction, exporting per-layer key/value matrices on the way.  Weights are
drawn once from a seed and never trained: every scheduling property the rest
of the package cares about is weight-independent.

Determinism contract: all kernels are pure float64 numpy with a fixed
left-to-right gather order over key frames (sink and pool blocks ascending,
then batch blocks ascending).  Two evaluations of the same inputs agree
bit-exactly regardless of worker placement.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import MAX_LEVEL, Conditioning
from .errors import ContractViolation, InvalidInputError, NumericError

_LEVEL_FEATS = 8
_RMS_EPS = 1e-6


@dataclass(frozen=True)
class ModelWeights:
    """Projection matrices for ``layers`` attention layers plus the input and
    prediction heads.  Identical seed and dims give identical weights."""

    seed: int
    layers: int
    heads: int
    latent_dim: int
    cond_dim: int
    w_in: np.ndarray          # (D, D)
    w_cond: np.ndarray        # (D, Dc)
    w_level: np.ndarray       # (D, _LEVEL_FEATS)
    w_q: np.ndarray           # (L, D, D)
    w_k: np.ndarray           # (L, D, D)
    w_v: np.ndarray           # (L, D, D)
    w_o: np.ndarray           # (L, D, D)
    w_head: np.ndarray        # (D, D)

    @property
    def head_dim(self) -> int:
        return self.latent_dim // self.heads

    def arrays(self):
        return (self.w_in, self.w_cond, self.w_level, self.w_q, self.w_k,
                self.w_v, self.w_o, self.w_head)


def init_model(weight_seed: int, layers: int, heads: int, latent_dim: int,
               cond_dim: int) -> ModelWeights:
    """Draw deterministic fixed weights for the given dims."""
    if min(layers, heads, latent_dim, cond_dim) < 1:
        raise InvalidInputError("model dims must all be >= 1")
    if latent_dim % heads != 0:
        raise InvalidInputError(f"heads ({heads}) must divide latent_dim ({latent_dim})")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(weight_seed & 0xFFFFFFFFFFFFFFFF)))
    d = latent_dim

    def draw(*shape, fan_in):
        return rng.standard_normal(shape) / np.sqrt(fan_in)

    return ModelWeights(
        seed=weight_seed,
        layers=layers,
        heads=heads,
        latent_dim=latent_dim,
        cond_dim=cond_dim,
        w_in=draw(d, d, fan_in=d),
        w_cond=draw(d, cond_dim, fan_in=cond_dim),
        w_level=draw(d, _LEVEL_FEATS, fan_in=_LEVEL_FEATS),
        w_q=draw(layers, d, d, fan_in=d),
        w_k=draw(layers, d, d, fan_in=d),
        w_v=draw(layers, d, d, fan_in=d),
        w_o=draw(layers, d, d, fan_in=d),
        w_head=draw(d, d, fan_in=d),
    )


_SNAPSHOT_MAGIC = b"BCWT"
_SNAPSHOT_VERSION = 1


def save_weights(weights: ModelWeights, path) -> None:
    """Write a flat binary snapshot: magic, header (dims + seed), then the
    raw float64 tensors in declaration order."""
    header = struct.pack(
        "<4sIqIIII", _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, weights.seed,
        weights.layers, weights.heads, weights.latent_dim, weights.cond_dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in weights.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sIqIIII"))
        if len(head) != struct.calcsize("<4sIqIIII") \
                or not head.startswith(_SNAPSHOT_MAGIC):
            raise InvalidInputError(f"{path} is not a weight snapshot")
        magic, version, seed, layers, heads, d, dc = struct.unpack("<4sIqIIII", head)
        if version != _SNAPSHOT_VERSION:
            raise InvalidInputError(f"{path} is not a weight snapshot")
        blank = init_model(0, layers, heads, d, dc)
        arrays = []
        for ref in blank.arrays():
            buf = fh.read(ref.size * 8)
            if len(buf) != ref.size * 8:
                raise InvalidInputError(f"truncated weight snapshot {path}")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(ref.shape).copy())
    return ModelWeights(seed, layers, heads, d, dc, *arrays)


@dataclass(frozen=True)
class LayerKV:
    """Per-layer key/value matrices for one block, shaped (S, heads, head_dim),
    tagged with the noise level and conditioning they were produced under."""

    block_index: int
    layer_index: int
    keys: np.ndarray
    values: np.ndarray
    noise_tag: float
    conditioning_id: str

    @property
    def frame_count(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class AttentionMask:
    """Boolean visibility over (query frame, key frame).

    Rows span the batch blocks' frames in block order; columns span the pool
    blocks' frames followed by the batch blocks' frames, both in block order.
    Within a block the mask is always all-ones.
    """

    batch_blocks: tuple[int, ...]
    pool_blocks: tuple[int, ...]
    block_size: int
    matrix: np.ndarray

    @property
    def key_blocks(self) -> tuple[int, ...]:
        return self.pool_blocks + self.batch_blocks

    def visible_key_blocks(self, query_block: int) -> list[int]:
        """Key blocks visible to ``query_block``'s frames, ascending."""
        row = self.batch_blocks.index(query_block) * self.block_size
        cols = self.matrix[row]
        visible = [
            blk for j, blk in enumerate(self.key_blocks)
            if cols[j * self.block_size]
        ]
        return sorted(visible)

    def visible_frames(self, query_block: int) -> int:
        return len(self.visible_key_blocks(query_block)) * self.block_size


def build_mask(batch_blocks, pool_blocks, mode: str, block_size: int) -> AttentionMask:
    """Visibility for one batch: ``causal`` lets a block see itself and lower
    block indices only; ``bidirectional`` opens the whole batch plus every
    supplied pool block to every query."""
    batch = tuple(sorted(int(b) for b in batch_blocks))
    pool = tuple(sorted(int(b) for b in pool_blocks))
    if not batch:
        raise ContractViolation("batch must be non-empty")
    if set(batch) & set(pool):
        raise ContractViolation(
            f"pool and batch overlap: {sorted(set(batch) & set(pool))}"
        )
    if mode not in ("causal", "bidirectional"):
        raise InvalidInputError(f"unknown attention mode {mode!r}")
    key_blocks = pool + batch
    s = block_size
    matrix = np.zeros((len(batch) * s, len(key_blocks) * s), dtype=bool)
    for qi, qb in enumerate(batch):
        for kj, kb in enumerate(key_blocks):
            if mode == "bidirectional" or kb <= qb:
                matrix[qi * s:(qi + 1) * s, kj * s:(kj + 1) * s] = True
    matrix.setflags(write=False)
    return AttentionMask(batch_blocks=batch, pool_blocks=pool, block_size=s, matrix=matrix)


@dataclass(frozen=True)
class EntryInput:
    """One batch entry handed to the forward pass."""

    block_index: int
    latents: np.ndarray          # (S, D)
    noise_level: float
    conditioning: Conditioning


@dataclass(frozen=True)
class EntryOutput:
    block_index: int
    x0: np.ndarray               # (S, D)
    kv: tuple[LayerKV, ...]      # one per layer


def _position_encoding(frame0: int, size: int, dim: int) -> np.ndarray:
    pos = np.arange(frame0, frame0 + size, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    enc = np.zeros((size, dim))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def _level_features(level: float) -> np.ndarray:
    s = level / MAX_LEVEL
    k = np.arange(1, _LEVEL_FEATS // 2 + 1, dtype=np.float64)
    return np.concatenate([np.sin(2 * np.pi * s * k), np.cos(2 * np.pi * s * k)])


def _rms_norm(h: np.ndarray) -> np.ndarray:
    return h / np.sqrt(np.mean(h * h, axis=-1, keepdims=True) + _RMS_EPS)


def embed_entry(weights: ModelWeights, entry: EntryInput) -> np.ndarray:
    """Input embedding: latent projection + frame position + noise level +
    conditioning, all additive."""
    s, d = entry.latents.shape
    if d != weights.latent_dim:
        raise ContractViolation(
            f"latents dim {d} does not match model dim {weights.latent_dim}"
        )
    if not np.all(np.isfinite(entry.latents)):
        raise NumericError(f"non-finite latents in block {entry.block_index}")
    if not 0.0 <= entry.noise_level <= MAX_LEVEL:
        raise ContractViolation(f"noise level {entry.noise_level} out of [0, {MAX_LEVEL:g}]")
    h = entry.latents @ weights.w_in.T
    h += _position_encoding(entry.block_index * s, s, weights.latent_dim)
    h += weights.w_level @ _level_features(entry.noise_level)
    h += weights.w_cond @ entry.conditioning.embedding
    return h


def layer_qkv(weights: ModelWeights, layer: int, h: np.ndarray):
    """(q, k, v) for one entry at one layer, each shaped (S, H, head_dim)."""
    s = h.shape[0]
    hn = _rms_norm(h)
    shape = (s, weights.heads, weights.head_dim)
    q = (hn @ weights.w_q[layer].T).reshape(shape)
    k = (hn @ weights.w_k[layer].T).reshape(shape)
    v = (hn @ weights.w_v[layer].T).reshape(shape)
    return q, k, v


def layer_attend(weights: ModelWeights, layer: int, h: np.ndarray, q: np.ndarray,
                 keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Residual attention update for one entry.  ``keys``/``values`` hold the
    already-gathered visible frames, (K, H, head_dim)."""
    s = h.shape[0]
    scale = 1.0 / np.sqrt(weights.head_dim)
    out = np.empty((s, weights.heads, weights.head_dim))
    for head in range(weights.heads):
        scores = (q[:, head, :] @ keys[:, head, :].T) * scale
        scores -= scores.max(axis=1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=1, keepdims=True)
        out[:, head, :] = w @ values[:, head, :]
    return h + out.reshape(s, weights.latent_dim) @ weights.w_o[layer].T


def predict_head(weights: ModelWeights, h: np.ndarray) -> np.ndarray:
    return _rms_norm(h) @ weights.w_head.T


def _gather(layer: int, visible_blocks, pool_by_block, fresh_by_block):
    """Concatenate visible (K, V) for one layer in ascending block order.
    Fresh batch KV wins over a stale pool entry for the same block."""
    ks, vs = [], []
    for blk in visible_blocks:
        if blk in fresh_by_block:
            k, v = fresh_by_block[blk]
        else:
            kv = pool_by_block[blk][layer]
            k, v = kv.keys, kv.values
        ks.append(k)
        vs.append(v)
    return np.concatenate(ks, axis=0), np.concatenate(vs, axis=0)


def forward(weights: ModelWeights, batch, visible_kv, mask: AttentionMask,
            mapper=map):
    """Run every batch entry through the layer stack with shared attention.

    ``batch`` is a list of :class:`EntryInput`; ``visible_kv`` a list of
    per-layer ``LayerKV`` tuples for the pool blocks the mask references.
    ``mapper`` lets an executor fan the per-entry phases out over workers;
    the default runs them inline.  Results are bit-identical either way.

    Returns one :class:`EntryOutput` per entry, whose fresh KV is tagged with
    the entry's noise level and conditioning id.
    """
    batch = list(batch)
    if [e.block_index for e in batch] != list(mask.batch_blocks):
        raise ContractViolation(
            f"mask batch {mask.batch_blocks} does not match entries "
            f"{[e.block_index for e in batch]}"
        )
    pool_by_block = {}
    for kv_layers in visible_kv:
        if len(kv_layers) != weights.layers:
            raise ContractViolation(
                f"pool entry for block {kv_layers[0].block_index} has "
                f"{len(kv_layers)} layers, model has {weights.layers}"
            )
        pool_by_block[kv_layers[0].block_index] = kv_layers
    if set(pool_by_block) != set(mask.pool_blocks):
        raise ContractViolation(
            f"mask pool {mask.pool_blocks} does not match supplied KV "
            f"{sorted(pool_by_block)}"
        )
    if any(e.latents.shape[0] != mask.block_size for e in batch):
        raise ContractViolation("entry frame count does not match mask block size")

    hidden = list(mapper(lambda i: embed_entry(weights, batch[i]), range(len(batch))))
    visible = {e.block_index: mask.visible_key_blocks(e.block_index) for e in batch}
    kv_out = [[] for _ in batch]
    for layer in range(weights.layers):
        qkv = list(mapper(lambda i: layer_qkv(weights, layer, hidden[i]), range(len(batch))))
        fresh = {e.block_index: (qkv[i][1], qkv[i][2]) for i, e in enumerate(batch)}

        def attend(i):
            entry = batch[i]
            keys, values = _gather(layer, visible[entry.block_index], pool_by_block, fresh)
            return layer_attend(weights, layer, hidden[i], qkv[i][0], keys, values)

        hidden = list(mapper(attend, range(len(batch))))
        for i, e in enumerate(batch):
            kv_out[i].append(LayerKV(
                block_index=e.block_index, layer_index=layer,
                keys=qkv[i][1], values=qkv[i][2],
                noise_tag=e.noise_level, conditioning_id=e.conditioning.id,
            ))

    x0s = list(mapper(lambda i: predict_head(weights, hidden[i]), range(len(batch))))
    return [
        EntryOutput(block_index=e.block_index, x0=x0s[i], kv=tuple(kv_out[i]))
        for i, e in enumerate(batch)
    ]


def renoise(x0: np.ndarray, eps: np.ndarray, level: float) -> np.ndarray:
    """Blend a clean prediction back to ``level``: (1 - s)*x0 + s*eps with
    s = level / 1000, so level 0 returns x0 and level 1000 returns eps."""
    if x0.shape != eps.shape:
        raise ContractViolation(f"renoise shape mismatch {x0.shape} vs {eps.shape}")
    if not 0.0 <= level <= MAX_LEVEL:
        raise ContractViolation(f"renoise level {level} out of [0, {MAX_LEVEL:g}]")
    sigma = level / MAX_LEVEL
    return (1.0 - sigma) * x0 + sigma * eps
