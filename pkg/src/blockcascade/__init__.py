"""Cascaded block-causal diffusion rollouts with a shared KV pool.

Library surface: configuration, the deterministic toy denoiser, the KV pool,
the cascade scheduler and session loops, the multi-worker executor with its
cost model, trace metrics, and the streaming service.
"""

from .config import CascadeConfig, load_config, dump_config, with_fields
from .core import (Block, Conditioning, LatentFrame, NoiseStream,
                   TimestepSchedule, embed_prompt, make_schedule, noise_draw)
from .denoiser import (AttentionMask, EntryInput, EntryOutput, LayerKV,
                       ModelWeights, build_mask, forward, init_model,
                       load_weights, renoise, save_weights)
from .engine import (RunResult, run_cascade, run_sequential_reference,
                     DEFAULT_SESSION_SEED, DEFAULT_WEIGHT_SEED)
from .errors import (CascadeError, ContractViolation, InvalidInputError,
                     IterationError, NumericError)
from .executor import (CostModel, WorkerPool, decode_block, execute,
                       make_decode_map)
from .interactive import (CommandQueue, LiveSwitchRequest, SwitchEvent,
                          SwitchSpec, switch_latency)
from .kvpool import KVPool, RecacheResult, insert, pool_frame_count, recache, visible_set
from .metrics import (FpsSeries, Trace, TraceEvent, attention_cost,
                      export_trace, import_trace, instantaneous_fps,
                      streaming_fps, verify_schedule_consistency)
from .bench import (ablation_grid, run_with_overlap, speedup_report,
                    SpeedupReport)
from .scheduler import (BatchPlan, CascadeState, PlanEntry, advance,
                        apply_results, plan_iteration)

__version__ = "0.1.0"
