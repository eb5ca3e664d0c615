"""Command-line interface.

Subcommands: ``generate`` (one run: trace, FPS table, figures), ``ablate``
(offset x attention-mode x workers grid), ``bench`` (worker-scaling speedup
report), ``serve`` (HTTP streaming service).  Flags mirror the config fields
1:1 and layer on top of ``--config`` files and ``CASCADE_*`` environment
variables.

Exit codes: 0 ok, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

from .bench import (ablation_grid, speedup_report, write_ablation_csv,
                    write_fps_series_csv)
from .config import CascadeConfig, load_config
from .engine import (DEFAULT_SESSION_SEED, DEFAULT_WEIGHT_SEED, run_cascade)
from .errors import InvalidInputError
from .gateway import events_from_trace
from .interactive import SwitchSpec
from .metrics import export_trace, instantaneous_fps, streaming_fps


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError(message)


_CONFIG_FLAG_TYPES = {bool: str, tuple: str}


def _add_config_flags(parser):
    for f in fields(CascadeConfig):
        kind = type(getattr(CascadeConfig(), f.name))
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None,
                            type=_CONFIG_FLAG_TYPES.get(kind, kind),
                            help=f"config field {f.name}")


def _add_common(parser):
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--prompt", default="a drifting paper boat")
    parser.add_argument("--seed", type=int, default=DEFAULT_SESSION_SEED)
    parser.add_argument("--weight-seed", type=int, default=DEFAULT_WEIGHT_SEED)
    parser.add_argument("--out", default="out", help="output directory")
    _add_config_flags(parser)


def _resolve_config(args) -> CascadeConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(CascadeConfig)}
    return load_config(path=args.config, overrides=overrides)


def _parse_workers(raw: str) -> list[int]:
    try:
        counts = [int(x) for x in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise InvalidInputError(f"bad worker list {raw!r}: {exc}")
    if not counts or min(counts) < 1:
        raise InvalidInputError(f"worker list must hold positive ints, got {raw!r}")
    return counts


def build_parser() -> _Parser:
    parser = _Parser(prog="blockcascade")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run one session and export reports")
    _add_common(gen)
    gen.add_argument("--switch-block", type=int, default=None,
                     help="apply a prompt switch at this block's emission")
    gen.add_argument("--switch-mode", choices=("cascade", "recache"),
                     default="cascade")
    gen.add_argument("--switch-prompt", default=None)
    gen.add_argument("--events-out", default=None,
                     help="also export the service event stream (JSON lines)")

    abl = sub.add_parser("ablate", help="offset x mode x workers grid")
    _add_common(abl)
    abl.add_argument("--workers-list", default="1,5")

    ben = sub.add_parser("bench", help="worker-scaling speedup report")
    _add_common(ben)
    ben.add_argument("--workers-list", default="1,2,5")

    srv = sub.add_parser("serve", help="start the streaming service")
    _add_common(srv)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8600)
    srv.add_argument("--pace-seconds", type=float, default=0.25,
                     help="wall delay per iteration so humans can watch")
    return parser


def _cmd_generate(args) -> int:
    from . import plotting

    config = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    switches = []
    if args.switch_prompt is not None:
        if args.switch_block is None:
            raise InvalidInputError("--switch-prompt needs --switch-block")
        switches.append(SwitchSpec(prompt=args.switch_prompt,
                                   mode=args.switch_mode,
                                   at_block=args.switch_block))
    result = run_cascade(config, args.prompt, session_seed=args.seed,
                         weight_seed=args.weight_seed, switches=switches)
    export_trace(result.trace, out / "trace.jsonl", "json-lines")
    export_trace(result.trace, out / "fps.csv", "csv")
    series = instantaneous_fps(result.trace)
    plotting.save_fps_curve(series, out / "fps.png")
    plotting.save_occupancy(result.trace, out / "occupancy.png")
    if args.events_out:
        lines = events_from_trace(result.trace, config, result.outputs,
                                  weight_seed=args.weight_seed)
        Path(args.events_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    digest = hashlib.sha256()
    for block in sorted(result.outputs):
        digest.update(result.outputs[block].tobytes())
    summary = {
        "blocks": config.num_blocks,
        "iterations": result.iterations,
        "total_passes": result.trace.total_passes,
        "modeled_time": result.trace.total_modeled_time,
        "streaming_fps": (streaming_fps(result.trace)
                          if config.num_blocks >= 9 else None),
        "output_sha256": digest.hexdigest(),
        "switches": [e.to_dict() for e in result.switch_events],
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_ablate(args) -> int:
    from . import plotting

    config = _resolve_config(args)
    workers = _parse_workers(args.workers_list)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, series = ablation_grid(config, workers, prompt=args.prompt,
                                 session_seed=args.seed,
                                 weight_seed=args.weight_seed)
    write_ablation_csv(rows, out / "ablation.csv")
    write_fps_series_csv(series, out / "fps_curves.csv")
    for g in workers:
        plotting.save_ablation_curves(series, g, out / f"fps_curves_g{g}.png")
    print(f"{'offset':>6} {'mode':>14} {'workers':>7} {'iters':>6} "
          f"{'passes':>6} {'stream_fps':>11} {'modeled':>9}")
    for row in rows:
        print(f"{row.offset:>6} {row.attention_mode:>14} {row.workers:>7} "
              f"{row.iterations:>6} {row.total_passes:>6} "
              f"{row.streaming_fps:>11.3f} {row.modeled_time:>9.2f}")
    return 0


def _cmd_bench(args) -> int:
    from . import plotting

    config = _resolve_config(args)
    workers = _parse_workers(args.workers_list)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = speedup_report(config, workers, prompt=args.prompt,
                            session_seed=args.seed,
                            weight_seed=args.weight_seed)
    report.to_csv(out / "speedup.csv")
    plotting.save_speedup_curve(report, out / "speedup.png")
    print(f"sequential modeled time: {report.baseline_modeled:.3f}")
    for row in report.rows:
        print(f"workers={row.workers}: modeled speedup {row.modeled_speedup:.2f}x "
              f"(ideal {row.ideal_speedup:.2f}x)"
              + (" sub-linear" if row.sublinear else ""))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .gateway import create_app

    config = _resolve_config(args)  # validated defaults for error-free serving
    app = create_app()
    app.state.default_config = config
    app.state.pace_seconds = args.pace_seconds
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "ablate": _cmd_ablate,
    "bench": _cmd_bench,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (_CliError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
