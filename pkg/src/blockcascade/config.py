"""Run configuration: pipeline geometry, model dims, cost-model parameters.

Config files are flat YAML mappings whose keys mirror the dataclass field
names exactly; any field can be overridden through ``CASCADE_<FIELD>``
environment variables (upper-cased field name).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, asdict, replace

import yaml

from .core import make_schedule
from .errors import InvalidInputError

ATTENTION_MODES = ("causal", "bidirectional")
ENV_PREFIX = "CASCADE_"


@dataclass(frozen=True)
class CascadeConfig:
    """Everything a session needs besides the prompt and the seeds.

    ``offset`` is the pass lag between consecutive block starts: 1 gives the
    deepest cascade, ``passes`` reduces to the sequential block-causal
    rollout.  ``workers`` only chooses how batch entries are spread over
    executors; it never changes the schedule or the outputs.
    """

    block_size: int = 3
    latent_dim: int = 16
    cond_dim: int = 16
    window_blocks: int = 7
    sink_blocks: int = 1
    offset: int = 1
    attention_mode: str = "bidirectional"
    workers: int = 1
    total_frames: int = 39
    video_frames_per_latent: int = 4
    layers: int = 2
    heads: int = 2
    head_dim: int = 8
    pixel_dim: int = 16
    denoise_levels: tuple[float, ...] = (1000.0, 750.0, 500.0, 250.0)
    refresh_sink_on_switch: bool = False
    # Modeled cost parameters (time units); pass cost is affine in the
    # number of key frames a pass attends over.
    pass_cost_base: float = 1.0
    pass_cost_per_frame: float = 0.0
    comm_cost_per_frame: float = 0.0
    decode_cost: float = 0.0
    decode_overlap: bool = False

    @property
    def passes(self) -> int:
        return len(self.denoise_levels) + 1

    @property
    def num_blocks(self) -> int:
        return math.ceil(self.total_frames / self.block_size)

    @property
    def cascade_width(self) -> int:
        """Widest batch the schedule can produce."""
        return math.ceil(self.passes / self.offset)

    def schedule(self):
        return make_schedule(self.denoise_levels)

    def validate(self) -> "CascadeConfig":
        bad = []
        for name in ("block_size", "latent_dim", "cond_dim", "workers",
                     "total_frames", "video_frames_per_latent", "layers",
                     "heads", "head_dim", "pixel_dim"):
            if getattr(self, name) < 1:
                bad.append(name)
        if self.window_blocks < 1:
            bad.append("window_blocks")
        if self.sink_blocks not in (0, 1):
            bad.append("sink_blocks")
        if self.attention_mode not in ATTENTION_MODES:
            bad.append("attention_mode")
        for name in ("pass_cost_base", "pass_cost_per_frame",
                     "comm_cost_per_frame", "decode_cost"):
            if getattr(self, name) < 0:
                bad.append(name)
        if bad:
            raise InvalidInputError(f"invalid config fields: {', '.join(sorted(bad))}", fields=bad)

        make_schedule(self.denoise_levels)  # raises on malformed levels
        if not 1 <= self.offset <= self.passes:
            raise InvalidInputError(
                f"offset must lie in [1, {self.passes}], got {self.offset}", fields=["offset"]
            )
        if self.heads * self.head_dim != self.latent_dim:
            raise InvalidInputError(
                f"heads*head_dim must equal latent_dim "
                f"({self.heads}*{self.head_dim} != {self.latent_dim})",
                fields=["heads", "head_dim", "latent_dim"],
            )
        if self.cascade_width > self.window_blocks + self.sink_blocks:
            raise InvalidInputError(
                f"cascade width {self.cascade_width} does not fit the visible window "
                f"(window_blocks + sink_blocks = {self.window_blocks + self.sink_blocks}); "
                f"widen the window or raise the offset",
                fields=["offset", "window_blocks", "sink_blocks"],
            )
        if self.num_blocks < 1:
            raise InvalidInputError("total_frames must yield at least one block",
                                    fields=["total_frames"])
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["denoise_levels"] = list(self.denoise_levels)
        return out


_BOOL_FIELDS = {"refresh_sink_on_switch", "decode_overlap"}


def _coerce(name: str, kind, raw):
    if isinstance(raw, str):
        raw = raw.strip()
        if name == "denoise_levels":
            raw = [p for p in raw.replace(",", " ").split() if p]
        elif name in _BOOL_FIELDS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise InvalidInputError(f"{name} must be a boolean, got {raw!r}", fields=[name])
    if name == "denoise_levels":
        return tuple(float(x) for x in raw)
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"config field {name}: {exc}", fields=[name]) from exc


def config_from_mapping(mapping: dict) -> CascadeConfig:
    known = {f.name: f.type for f in fields(CascadeConfig)}
    kinds = {f.name: type(getattr(CascadeConfig(), f.name)) for f in fields(CascadeConfig)}
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        raise InvalidInputError(f"unknown config fields: {', '.join(unknown)}", fields=unknown)
    kwargs = {name: _coerce(name, kinds[name], value) for name, value in mapping.items()}
    return CascadeConfig(**kwargs).validate()


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(CascadeConfig)}
    out = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name in names:
            out[name] = value
    return out


def load_config(path=None, environ=None, overrides=None) -> CascadeConfig:
    """Merge file < environment < explicit overrides into a validated config."""
    mapping = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise InvalidInputError(f"config file {path} must hold a key/value mapping")
        mapping.update(loaded)
    mapping.update(env_overrides(environ))
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(mapping)


def dump_config(config: CascadeConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)


def with_fields(config: CascadeConfig, **kwargs) -> CascadeConfig:
    return replace(config, **kwargs).validate()
