"""Behavioral models that drive the monitor: scripted sapp workloads and
legacy-OS scheduler strategies, from cooperative to openly adversarial.

Strategies decide, quantum by quantum, which sapp to run for how long and
which probes to fire; behaviors decide what a sapp does with its slice.
Both are deterministic functions of the scenario, so runs replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import SimError
from .hw import LOS, AccessContext, AccessKind, Machine
from .monitor import SappDescriptor, SliceEnd
from .policy import SchedulingPolicy
from .trace import ACTOR_LOS, Trace

MMIO_OP_COST_MS = 1
PROBE_COST_MS = 1


# -- sapp behaviors -----------------------------------------------------------

@dataclass(frozen=True)
class ComputeOnly:
    yield_after_ms: int


@dataclass(frozen=True)
class PeripheralUser:
    name: str
    ops_per_slice: int


@dataclass(frozen=True)
class MemoryProbe:
    addresses: tuple[int, ...]


SappBehavior = ComputeOnly | PeripheralUser | MemoryProbe


def run_sapp_slice(
    machine: Machine,
    trace: Trace,
    desc: SappDescriptor,
    behavior: SappBehavior,
    slice_ms: int,
    start_ms: int,
) -> tuple[int, SliceEnd]:
    """Execute one scheduled slice of a sapp's scripted workload.

    Returns the consumed runtime and why the slice ended. Faulting probes
    are recorded and do not stop the sapp.
    """
    ctx = AccessContext.for_domain(desc.domain)
    if isinstance(behavior, ComputeOnly):
        if behavior.yield_after_ms <= slice_ms:
            return behavior.yield_after_ms, SliceEnd.YIELD
        return slice_ms, SliceEnd.SLICE_EXPIRED

    if isinstance(behavior, PeripheralUser):
        ops_done = min(behavior.ops_per_slice, slice_ms // MMIO_OP_COST_MS)
        for i in range(ops_done):
            kind = AccessKind.READ if i % 2 == 0 else AccessKind.WRITE
            t = start_ms + i * MMIO_OP_COST_MS
            try:
                res = machine.mmio_access(ctx, behavior.name, i % 16, kind, value=i & 0xFF)
                fault = "-" if res.allowed else res.fault.value
            except SimError as err:
                fault = err.code
            trace.emit(
                t, desc.handle, "mmio", name=behavior.name,
                offset=i % 16, kind=kind.value, fault=fault,
            )
        ran = ops_done * MMIO_OP_COST_MS
        if ops_done == behavior.ops_per_slice:
            return ran, SliceEnd.YIELD
        return slice_ms, SliceEnd.SLICE_EXPIRED

    if isinstance(behavior, MemoryProbe):
        probes_done = min(len(behavior.addresses), slice_ms // PROBE_COST_MS)
        for i in range(probes_done):
            addr = behavior.addresses[i]
            t = start_ms + i * PROBE_COST_MS
            try:
                res = machine.read(ctx, addr, 1)
                fault = "-" if res.allowed else res.fault.value
            except SimError as err:
                fault = err.code
            trace.emit(t, desc.handle, "mem_probe", addr=addr, kind="Read", fault=fault)
        ran = probes_done * PROBE_COST_MS
        if probes_done == len(behavior.addresses):
            return ran, SliceEnd.YIELD
        return slice_ms, SliceEnd.SLICE_EXPIRED

    raise TypeError(f"unknown behavior {behavior!r}")


# -- LOS strategies -----------------------------------------------------------

@dataclass(frozen=True)
class LosStrategy:
    """Base scheduler: grant every sapp its policy minimum per window."""

    def target_ms(self, sapp_index: int, policy: SchedulingPolicy) -> int:
        return policy.min_runtime_ms

    def probe_addresses(self, sapp_regions: list[int]) -> tuple[int, ...]:
        return ()

    def trap_due(self, now_ms: int, last_trap_ms: int) -> bool:
        # Models LOS-internal context switches trapping through the
        # monitor at the end of every scheduling quantum.
        return True


@dataclass(frozen=True)
class Cooperative(LosStrategy):
    pass


@dataclass(frozen=True)
class Starver(LosStrategy):
    """Censorship: the listed sapps are never scheduled."""

    targets: tuple[int, ...]

    def target_ms(self, sapp_index: int, policy: SchedulingPolicy) -> int:
        if sapp_index in self.targets:
            return 0
        return policy.min_runtime_ms


@dataclass(frozen=True)
class SelectiveDoS(LosStrategy):
    """Degrade one sapp to a duty fraction of its entitlement."""

    target: int
    duty: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.duty <= 1.0:
            raise ValueError("duty must lie in [0, 1]")

    def target_ms(self, sapp_index: int, policy: SchedulingPolicy) -> int:
        if sapp_index == self.target:
            return math.floor(self.duty * policy.min_runtime_ms)
        return policy.min_runtime_ms


@dataclass(frozen=True)
class Inspector(LosStrategy):
    """Schedules correctly but reads into sapp memory every quantum."""

    probe_addrs: tuple[int, ...] = ()

    def probe_addresses(self, sapp_regions: list[int]) -> tuple[int, ...]:
        return self.probe_addrs if self.probe_addrs else tuple(sapp_regions)


@dataclass(frozen=True)
class PolicyCheater(LosStrategy):
    """Grants only a fraction of every sapp's minimum."""

    fraction: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")

    def target_ms(self, sapp_index: int, policy: SchedulingPolicy) -> int:
        return math.floor(self.fraction * policy.min_runtime_ms)


@dataclass(frozen=True)
class NoCheckLOS(LosStrategy):
    """Runs with traps suppressed: the monitor regains control so rarely
    that every periodic check it does get to run is overdue."""

    gap_ms: int = 250

    def target_ms(self, sapp_index: int, policy: SchedulingPolicy) -> int:
        return 0

    def trap_due(self, now_ms: int, last_trap_ms: int) -> bool:
        return now_ms - last_trap_ms >= self.gap_ms


@dataclass(frozen=True)
class SwitchPick:
    handle: str
    slice_ms: int


def pick_next_switch(
    strategy: LosStrategy,
    candidates: list[tuple[int, str, SchedulingPolicy, int]],
    remaining_ms: int,
    skip: frozenset[str] | set[str],
) -> SwitchPick | None:
    """Choose the next sapp slice within the current quantum.

    ``candidates`` holds (scenario index, handle, policy, granted so far in
    the current window) in index order. Returns None when every target is
    met, which hands the rest of the quantum to the LOS itself.
    """
    if remaining_ms <= 0:
        return None
    for index, handle, policy, granted in candidates:
        if handle in skip:
            continue
        target = strategy.target_ms(index, policy)
        if granted < target:
            return SwitchPick(handle, min(remaining_ms, target - granted))
    return None


def probe_as_los(machine: Machine, trace: Trace, addr: int, now_ms: int) -> bool:
    """One supervisor-mode read the LOS has no business making. Returns
    True when the probe (improperly) succeeded."""
    ctx = AccessContext.for_domain(LOS)
    try:
        res = machine.read(ctx, addr, 1)
        fault = "-" if res.allowed else res.fault.value
        ok = res.allowed
    except SimError as err:
        fault = err.code
        ok = False
    trace.emit(now_ms, ACTOR_LOS, "mem_probe", addr=addr, kind="Read", fault=fault)
    return ok
