"""Throughput reports: worker-scaling speedups, decode-overlap runs, and the
offset x attention-mode ablation grid.

All numbers default to modeled time so reports are hardware-independent;
wall-clock columns ride along for smoke comparisons on the host.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .config import CascadeConfig, with_fields
from .engine import (DEFAULT_SESSION_SEED, DEFAULT_WEIGHT_SEED,
                     run_cascade, run_sequential_reference)
from .errors import ContractViolation, InvalidInputError
from .metrics import Trace, instantaneous_fps, streaming_fps


def run_with_overlap(config: CascadeConfig, prompt: str, **kwargs) -> Trace:
    """One cascade run with decode overlapped onto a side lane; timing-only:
    latents and pixels match the non-overlapped run exactly."""
    overlapped = with_fields(config, decode_overlap=True)
    if overlapped.workers < 2:
        raise InvalidInputError("decode overlap needs at least 2 workers",
                                fields=["decode_overlap", "workers"])
    return run_cascade(overlapped, prompt, **kwargs).trace


@dataclass(frozen=True)
class SpeedupRow:
    workers: int
    modeled_time: float
    modeled_speedup: float
    wall_time: float
    wall_speedup: float
    ideal_speedup: float
    sublinear: bool


@dataclass(frozen=True)
class SpeedupReport:
    baseline_modeled: float
    baseline_wall: float
    rows: tuple[SpeedupRow, ...]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["workers", "modeled_time", "modeled_speedup",
                             "wall_time", "wall_speedup", "ideal_speedup",
                             "sublinear"])
            for row in self.rows:
                writer.writerow([row.workers, repr(row.modeled_time),
                                 repr(row.modeled_speedup), repr(row.wall_time),
                                 repr(row.wall_speedup), repr(row.ideal_speedup),
                                 int(row.sublinear)])


def speedup_report(config: CascadeConfig, worker_counts,
                   prompt: str = "benchmark prompt",
                   session_seed: int = DEFAULT_SESSION_SEED,
                   weight_seed: int = DEFAULT_WEIGHT_SEED) -> SpeedupReport:
    """Cascade speedup over the sequential single-worker rollout for each
    worker count, on both clocks.

    With any strictly positive communication or decode cost the modeled
    speedup stays below the worker count (sub-linear scaling).
    """
    config.validate()
    if config.num_blocks < config.passes:
        raise InvalidInputError(
            f"speedup report needs at least {config.passes} blocks, "
            f"got {config.num_blocks}"
        )
    reference = run_sequential_reference(config, prompt,
                                         session_seed=session_seed,
                                         weight_seed=weight_seed)
    base_modeled = reference.trace.total_modeled_time
    base_wall = reference.trace.total_wall_time
    ideal = (config.num_blocks * config.passes) / (
        (config.num_blocks - 1) * config.offset + config.passes)
    overhead = config.comm_cost_per_frame > 0 or config.decode_cost > 0
    rows = []
    for workers in worker_counts:
        run = run_cascade(with_fields(config, workers=workers), prompt,
                          session_seed=session_seed, weight_seed=weight_seed)
        modeled = run.trace.total_modeled_time
        wall = run.trace.total_wall_time
        speedup = base_modeled / modeled
        if overhead and workers > 1 and speedup >= workers:
            raise ContractViolation(
                f"speedup {speedup:.3f} not sub-linear at {workers} workers "
                f"despite positive comm/decode cost"
            )
        rows.append(SpeedupRow(
            workers=workers,
            modeled_time=modeled,
            modeled_speedup=speedup,
            wall_time=wall,
            wall_speedup=base_wall / wall if wall > 0 else float("nan"),
            ideal_speedup=ideal,
            sublinear=speedup < workers,
        ))
    return SpeedupReport(baseline_modeled=base_modeled, baseline_wall=base_wall,
                         rows=tuple(rows))


@dataclass(frozen=True)
class AblationRow:
    offset: int
    attention_mode: str
    workers: int
    iterations: int
    total_passes: int
    streaming_fps: float
    modeled_time: float


def ablation_grid(config: CascadeConfig, worker_counts,
                  prompt: str = "ablation prompt",
                  session_seed: int = DEFAULT_SESSION_SEED,
                  weight_seed: int = DEFAULT_WEIGHT_SEED):
    """Sweep offset in [1, passes] x {causal, bidirectional} x worker counts.

    Returns (rows, series) where ``series`` maps each grid point to its
    instantaneous-FPS values for curve plots.
    """
    rows = []
    series = {}
    for offset in range(1, config.passes + 1):
        for mode in ("causal", "bidirectional"):
            for workers in worker_counts:
                cfg = with_fields(config, offset=offset, attention_mode=mode,
                                  workers=workers)
                run = run_cascade(cfg, prompt, session_seed=session_seed,
                                  weight_seed=weight_seed)
                fps = instantaneous_fps(run.trace)
                rows.append(AblationRow(
                    offset=offset,
                    attention_mode=mode,
                    workers=workers,
                    iterations=run.iterations,
                    total_passes=run.trace.total_passes,
                    streaming_fps=streaming_fps(run.trace),
                    modeled_time=run.trace.total_modeled_time,
                ))
                series[(offset, mode, workers)] = fps
    return rows, series


def write_ablation_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["offset", "attention_mode", "workers", "iterations",
                         "total_passes", "streaming_fps", "modeled_time"])
        for row in rows:
            writer.writerow([row.offset, row.attention_mode, row.workers,
                             row.iterations, row.total_passes,
                             repr(row.streaming_fps), repr(row.modeled_time)])


def write_fps_series_csv(series, path) -> None:
    """Tidy per-block FPS curves for every grid point."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["offset", "attention_mode", "workers", "block_index",
                         "elapsed", "fps"])
        for (offset, mode, workers), fps in sorted(series.items()):
            for point in fps.points:
                writer.writerow([offset, mode, workers, point.block_index,
                                 repr(point.elapsed), repr(point.fps)])
