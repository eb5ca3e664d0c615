"""Mid-stream prompt switching.

Two modes: ``cascade`` swaps the conditioning only, so every in-flight block
absorbs the new prompt from its next pass onward at zero extra cost;
``recache`` additionally stalls generation while the whole KV pool is rebuilt
under the new prompt (the block-causal baseline behavior).

Requests land on a command queue and are drained at iteration boundaries, at
most one per boundary; the remainder stay queued.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .errors import InvalidInputError
from .metrics import Trace

SWITCH_MODES = ("cascade", "recache")


@dataclass(frozen=True)
class SwitchSpec:
    """A scripted switch: fires at ``at_block``'s emission iteration, or at an
    explicit iteration boundary."""

    prompt: str
    mode: str = "cascade"
    at_block: int | None = None
    at_iteration: int | None = None

    def __post_init__(self):
        if self.mode not in SWITCH_MODES:
            raise InvalidInputError(f"switch mode must be one of {SWITCH_MODES}")
        if (self.at_block is None) == (self.at_iteration is None):
            raise InvalidInputError("give exactly one of at_block / at_iteration")

    def boundary_iteration(self, offset: int, emit_pass: int) -> int:
        if self.at_iteration is not None:
            return self.at_iteration
        return self.at_block * offset + emit_pass


@dataclass(frozen=True)
class SwitchEvent:
    """Record of one applied switch."""

    iteration: int            # boundary the switch took effect at
    boundary_block: int       # lead block: first cache pass under the new prompt
    mode: str
    extra_passes: int         # recache forwards inserted (0 in cascade mode)
    conditioning_id: str
    prompt: str
    stall_modeled: float      # modeled stall paid before the next pass

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "boundary_block": self.boundary_block,
            "mode": self.mode,
            "extra_passes": self.extra_passes,
            "conditioning_id": self.conditioning_id,
            "prompt": self.prompt,
            "stall_modeled": self.stall_modeled,
        }


class LiveSwitchRequest:
    """A switch submitted while the session runs; the caller blocks on
    ``wait`` until the engine applies or rejects it at a boundary."""

    def __init__(self, prompt: str, mode: str = "cascade"):
        if mode not in SWITCH_MODES:
            raise InvalidInputError(f"switch mode must be one of {SWITCH_MODES}")
        if not prompt:
            raise InvalidInputError("prompt must be a non-empty string")
        self.prompt = prompt
        self.mode = mode
        self._done = threading.Event()
        self.event: SwitchEvent | None = None
        self.error: Exception | None = None

    def resolve(self, event: SwitchEvent) -> None:
        self.event = event
        self._done.set()

    def reject(self, error: Exception) -> None:
        self.error = error
        self._done.set()

    def wait(self, timeout: float = 30.0) -> SwitchEvent:
        if not self._done.wait(timeout):
            raise TimeoutError("switch request not applied in time")
        if self.error is not None:
            raise self.error
        return self.event


class CommandQueue:
    """Thread-safe switch inbox drained once per iteration boundary."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pending: list[LiveSwitchRequest] = []

    def submit(self, request: LiveSwitchRequest) -> LiveSwitchRequest:
        with self._lock:
            self._pending.append(request)
        return request

    def pop(self) -> LiveSwitchRequest | None:
        with self._lock:
            return self._pending.pop(0) if self._pending else None

    def reject_all(self, error: Exception) -> None:
        with self._lock:
            pending, self._pending = self._pending, []
        for request in pending:
            request.reject(error)


def switch_latency(trace: Trace, event: SwitchEvent) -> float:
    """Modeled stall the switch inserted between the last pre-switch emission
    and the first post-switch pass (0 for cascade mode)."""
    for trace_event in trace.events:
        record = trace_event.switch
        if record and record["iteration"] == event.iteration \
                and record["conditioning_id"] == event.conditioning_id:
            return record["stall_modeled"]
    raise InvalidInputError(
        f"switch at iteration {event.iteration} not found in trace"
    )
