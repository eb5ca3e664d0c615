"""Figure rendering for CLI reports.

Every report path writes a PNG next to its CSV: instantaneous-FPS curves per
configuration, worker-scaling speedup, and the pipeline occupancy chart.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_MODE_STYLE = {"causal": "--", "bidirectional": "-"}


def save_fps_curve(series, path, title="instantaneous FPS"):
    """One run's per-block FPS curve."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    blocks = [p.block_index for p in series.points]
    ax.plot(blocks, series.fps_values(), marker="o", lw=1.2)
    ax.set_xlabel("block")
    ax.set_ylabel("FPS (modeled)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_curves(series_by_key, workers, path):
    """FPS curves for every (offset, mode) at one worker count."""
    fig, ax = plt.subplots(figsize=(7, 3.6))
    for (offset, mode, g), series in sorted(series_by_key.items()):
        if g != workers:
            continue
        blocks = [p.block_index for p in series.points]
        ax.plot(blocks, series.fps_values(), _MODE_STYLE[mode],
                marker=".", lw=1.0, label=f"offset {offset} {mode}")
    ax.set_xlabel("block")
    ax.set_ylabel("FPS (modeled)")
    ax.set_title(f"instantaneous FPS, {workers} worker(s)")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_speedup_curve(report, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    workers = [r.workers for r in report.rows]
    ax.plot(workers, [r.modeled_speedup for r in report.rows], marker="o",
            label="modeled")
    ax.plot(workers, workers, ":", color="gray", label="linear")
    ax.set_xlabel("workers")
    ax.set_ylabel("speedup vs sequential")
    ax.set_title("worker scaling")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_occupancy(trace, path):
    """Pipeline occupancy: one bar per (iteration, in-flight block), shaded by
    noise level."""
    fig, ax = plt.subplots(figsize=(7, 3.6))
    cmap = plt.get_cmap("viridis")
    for event in trace.events:
        for entry in event.entries:
            level = entry["noise_level"]
            ax.barh(entry["block"], 1.0, left=event.iteration,
                    color=cmap(level / 1000.0), edgecolor="white", lw=0.3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("block")
    ax.set_title("pipeline occupancy (shade = noise level)")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
