"""The security monitor: the one trusted software component.

It owns sapp lifecycle (create with lock-then-lose-access, destroy with a
hardware wipe), validates exclusive peripheral concessions against the ROM
device tree, accounts granted runtime at context switches, runs periodic
policy checks with escalating sanctions, and builds attestation reports.

After a sapp's protection entry is locked the monitor can manage the sapp
but can no longer read or write its memory; creation ends with a self-check
access that must fault.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from . import attestation
from .errors import (
    AlreadyConceded,
    BadRange,
    DeviceLocked,
    InsufficientMemory,
    InvalidState,
    NoSuchSapp,
    NotOwner,
    OutOfProtEntries,
    RangeInUse,
    SimError,
    UnknownPeripheral,
)
from .hw import (
    LOS,
    SM,
    AccessContext,
    DomainId,
    Machine,
    PERMS_RW,
    PERMS_RWX,
    PhysRange,
    sapp_domain,
)
from .policy import CheckDueness, RuntimeLedger, SchedulingPolicy, check_due, evaluate
from .trace import ACTOR_LOS, ACTOR_SM, Trace

SM_CTX = AccessContext.for_domain(SM)

DEFAULT_CHECK_INTERVAL_MS = 100
DEFAULT_LOCK_THRESHOLD = 3


class SappState(enum.Enum):
    CREATED = "Created"
    RUNNABLE = "Runnable"
    RUNNING = "Running"
    DESTROYED = "Destroyed"


class SliceEnd(enum.Enum):
    YIELD = "Yield"
    SLICE_EXPIRED = "SliceExpired"


class SanctionKind(enum.Enum):
    USER_NOTIFICATION = "UserNotification"
    DEVICE_LOCK = "DeviceLock"


class SanctionCause(enum.Enum):
    POLICY_VIOLATION = "PolicyViolation"
    MISSED_CHECK = "MissedCheck"


@dataclass(frozen=True)
class Sanction:
    kind: SanctionKind
    cause: SanctionCause
    handle: str | None = None
    window_index: int | None = None
    deficit_ms: int | None = None


@dataclass(frozen=True)
class ControlReturn:
    ran_ms: int
    reason: SliceEnd


@dataclass
class SappDescriptor:
    sapp_id: int
    handle: str
    mem: PhysRange
    image_digest: attestation.Measurement
    policy: SchedulingPolicy
    peripherals: tuple[str, ...]
    prot_index: int
    state: SappState = SappState.CREATED
    next_window: int = 0  # first policy window not yet judged

    @property
    def domain(self) -> DomainId:
        return sapp_domain(self.sapp_id)

    @property
    def live(self) -> bool:
        return self.state is not SappState.DESTROYED


@dataclass(frozen=True)
class LosViewEntry:
    handle: str
    mem_size: int
    policy_min_ms: int
    policy_window_ms: int
    peripherals_held: tuple[str, ...]
    runtime_total_ms: int


@dataclass(frozen=True)
class LosView:
    """Everything the legacy OS may learn about the sapp population.

    Deliberately excludes image digests, image bytes, and any identifier
    correlated with sapp identity beyond the opaque per-boot handle.
    """

    entries: tuple[LosViewEntry, ...]

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            held = ",".join(e.peripherals_held)
            out.append(
                f"handle={e.handle} mem={e.mem_size} policy={e.policy_min_ms}/"
                f"{e.policy_window_ms} peripherals={held} runtime={e.runtime_total_ms}"
            )
        return out


def _merge_pool(ranges: list[PhysRange]) -> list[PhysRange]:
    merged: list[PhysRange] = []
    for rng in sorted(ranges, key=lambda r: r.base):
        if merged and merged[-1].end == rng.base:
            merged[-1] = PhysRange(merged[-1].base, merged[-1].size + rng.size)
        else:
            merged.append(rng)
    return merged


class SecurityMonitor:
    """Trusted state machine over one machine and one boot session.

    A fresh instance models one boot; after ``Machine.full_reset`` the
    harness constructs a new monitor on the same machine. The device root
    secret survives resets, the per-boot handle namespace does not.
    """

    def __init__(
        self,
        machine: Machine,
        los_memory: PhysRange,
        device_secret: bytes,
        rng: random.Random,
        trace: Trace,
        check_interval_ms: int = DEFAULT_CHECK_INTERVAL_MS,
        lock_threshold: int = DEFAULT_LOCK_THRESHOLD,
        boot_time: int = 0,
    ):
        self.machine = machine
        self.device_secret = device_secret
        self.check_interval_ms = check_interval_ms
        self.lock_threshold = lock_threshold
        self._rng = rng
        self.trace = trace

        self.sapps: dict[str, SappDescriptor] = {}
        self.current: DomainId = LOS
        self.ledger = RuntimeLedger()
        self.last_check = boot_time
        self.violation_count = 0
        self.device_locked = False
        self.free_pool: list[PhysRange] = []
        self.los_ranges: list[PhysRange] = [los_memory]
        self._los_entries: list[int] = []
        self.peripheral_owner: dict[str, DomainId] = {}
        self._peripheral_entry: dict[str, int] = {}
        self._next_sapp_id = 1

        self._boot(los_memory, boot_time)

    @property
    def boot_session(self) -> int:
        return self.machine.boot_session

    @property
    def sanction_state(self) -> str:
        if self.device_locked:
            return "Locked"
        if self.violation_count:
            return f"Notified({self.violation_count})"
        return "Normal"

    def _boot(self, los_memory: PhysRange, boot_time: int) -> None:
        if not self.machine.ram.contains_range(los_memory):
            raise BadRange(f"LOS memory {los_memory} outside RAM")
        idx = self._take_entry()
        self.machine.set_entry(idx, los_memory, PERMS_RWX, LOS)
        self._los_entries.append(idx)
        for p in self.machine.device_tree.peripherals:
            pidx = self._take_entry()
            self.machine.set_entry(pidx, p.mmio, PERMS_RW, LOS)
            self.peripheral_owner[p.name] = LOS
            self._peripheral_entry[p.name] = pidx
        self.trace.emit(
            boot_time,
            ACTOR_SM,
            "boot",
            session=self.boot_session,
            entries=len(self.machine.entries),
            ram=self.machine.ram.size,
            los_mem=los_memory.size,
        )

    def _take_entry(self) -> int:
        idx = self.machine.free_entry_index()
        if idx is None:
            raise OutOfProtEntries()
        return idx

    def _require_unlocked_device(self) -> None:
        if self.device_locked:
            raise DeviceLocked()

    def _fresh_handle(self) -> str:
        while True:
            handle = f"{self._rng.getrandbits(64):016x}"
            if handle not in self.sapps:
                return handle

    def _descriptor(self, handle: str) -> SappDescriptor:
        desc = self.sapps.get(handle)
        if desc is None:
            raise NoSuchSapp(handle)
        return desc

    def live_sapps(self) -> list[SappDescriptor]:
        return [d for d in self.sapps.values() if d.live]

    def pool_capacity(self) -> int:
        return sum(r.size for r in self.free_pool)

    # -- memory donation -------------------------------------------------

    def donate_memory(self, rng: PhysRange, now: int = 0) -> None:
        """LOS hands a range of its own memory to the sapp free pool."""
        self.trace.emit(now, ACTOR_LOS, "donate_memory", range=str(rng))
        try:
            holder = next((r for r in self.los_ranges if r.contains_range(rng)), None)
            if holder is None:
                raise RangeInUse(f"{rng} is not LOS-owned")
            pieces = []
            if holder.base < rng.base:
                pieces.append(PhysRange(holder.base, rng.base - holder.base))
            if rng.end < holder.end:
                pieces.append(PhysRange(rng.end, holder.end - rng.end))
            new_ranges = [r for r in self.los_ranges if r is not holder] + pieces
            # One protection entry per contiguous LOS range. A donation
            # removes one range and adds at most two, so at most one extra
            # entry is ever needed.
            extra = len(new_ranges) - len(self._los_entries)
            assert extra <= 1
            new_indices = list(self._los_entries)
            if extra == 1:
                new_indices.append(self._take_entry())
            for idx, r in zip(new_indices, new_ranges):
                self.machine.set_entry(idx, r, PERMS_RWX, LOS)
            for idx in new_indices[len(new_ranges):]:
                self.machine.clear_entry(idx)
            self.los_ranges = new_ranges
            self._los_entries = new_indices[:len(new_ranges)]
            self.free_pool = _merge_pool(self.free_pool + [rng])
        except SimError as err:
            self.trace.emit(now, ACTOR_LOS, "donate_memory.err", reason=err.code)
            raise
        self.trace.emit(now, ACTOR_LOS, "donate_memory.ok", pool=self.pool_capacity())

    # -- sapp lifecycle ----------------------------------------------------

    def create_sapp(
        self,
        image: bytes,
        mem_size: int,
        policy: SchedulingPolicy,
        peripherals: tuple[str, ...] | list[str],
        nonce: bytes,
        now: int = 0,
    ) -> tuple[str, attestation.AttestationReport]:
        """Carve a region, install the image, measure it, lock the entry,
        and prove the monitor lost access. Returns the per-boot handle and
        the creation report bound to ``nonce``."""
        requested = tuple(sorted(peripherals))
        self.trace.emit(
            now,
            ACTOR_SM,
            "create_sapp",
            mem=mem_size,
            policy=f"{policy.min_runtime_ms}/{policy.window_ms}",
            peripherals=",".join(requested),
        )
        try:
            handle, report = self._create_sapp(image, mem_size, policy, requested, nonce, now)
        except SimError as err:
            self.trace.emit(now, ACTOR_SM, "create_sapp.err", reason=err.code)
            raise
        self.trace.emit(now, ACTOR_SM, "create_sapp.ok", handle=handle)
        return handle, report

    def _create_sapp(self, image, mem_size, policy, requested, nonce, now):
        self._require_unlocked_device()
        for name in requested:
            if name not in self.machine.device_tree:
                raise UnknownPeripheral(name)
        if mem_size <= 0 or mem_size % 4096:
            raise BadRange(f"mem_size {mem_size} must be a positive page multiple")
        if len(image) > mem_size:
            raise InsufficientMemory("image larger than requested region")
        region = self._carve(mem_size)
        idx = self._take_entry()

        sapp_id = self._next_sapp_id
        self._next_sapp_id += 1
        handle = self._fresh_handle()
        domain = sapp_domain(sapp_id)

        # Scrub whatever the LOS left in the donated pages, then install.
        self.machine.hw_wipe(region)
        res = self.machine.write(SM_CTX, region.base, image)
        assert res.allowed, "image install must precede the lock"
        measurement = attestation.measure(image, policy, requested)

        self.machine.set_entry(idx, region, PERMS_RWX, domain)
        self.machine.lock_entry(idx)
        probe = self.machine.read(SM_CTX, region.base, 1)
        self.trace.emit(
            now,
            ACTOR_SM,
            "self_check",
            handle=handle,
            denied=not probe.allowed,
            result=str(probe),
        )

        desc = SappDescriptor(
            sapp_id=sapp_id,
            handle=handle,
            mem=region,
            image_digest=measurement,
            policy=policy,
            peripherals=requested,
            prot_index=idx,
            state=SappState.RUNNABLE,
            next_window=-(-now // policy.window_ms),  # first window starting at/after now
        )
        self.sapps[handle] = desc
        report = attestation.build_report(
            measurement, nonce, self.boot_session, mem_size, self.device_secret
        )
        self.trace.emit(now, ACTOR_SM, "report", **_report_fields(report))
        return handle, report

    def _carve(self, mem_size: int) -> PhysRange:
        for i, rng in enumerate(self.free_pool):
            if rng.size >= mem_size:
                region = PhysRange(rng.base, mem_size)
                rest = (
                    [PhysRange(rng.base + mem_size, rng.size - mem_size)]
                    if rng.size > mem_size
                    else []
                )
                self.free_pool[i:i + 1] = rest
                return region
        raise InsufficientMemory(f"no free chunk of {mem_size} bytes")

    def destroy_sapp(self, handle: str, now: int = 0) -> None:
        """Tear down a sapp. Its memory is scrubbed by the hardware wipe
        primitive (the monitor itself is locked out) and its peripherals
        revert to the LOS. The locked entry stays consumed until reset."""
        self.trace.emit(now, ACTOR_SM, "destroy_sapp", handle=handle)
        try:
            desc = self._descriptor(handle)
            if desc.state not in (SappState.CREATED, SappState.RUNNABLE):
                raise InvalidState(desc.state.value)
            self.machine.hw_wipe(desc.mem)
            reverted = []
            for name, owner in self.peripheral_owner.items():
                if owner == desc.domain:
                    self._set_peripheral_owner(name, LOS)
                    reverted.append(name)
            desc.state = SappState.DESTROYED
        except SimError as err:
            self.trace.emit(now, ACTOR_SM, "destroy_sapp.err", reason=err.code)
            raise
        self.trace.emit(
            now, ACTOR_SM, "destroy_sapp.ok", handle=handle, reverted=",".join(reverted)
        )

    # -- peripheral concession --------------------------------------------

    def _set_peripheral_owner(self, name: str, owner: DomainId) -> None:
        p = self.machine.device_tree.lookup(name)
        self.machine.set_entry(self._peripheral_entry[name], p.mmio, PERMS_RW, owner)
        self.peripheral_owner[name] = owner

    def concede_peripheral(self, name: str, to_handle: str, now: int = 0) -> None:
        """LOS transfers exclusive control of one peripheral to one sapp."""
        self.trace.emit(now, ACTOR_LOS, "concede_peripheral", name=name, to=to_handle)
        try:
            if name not in self.machine.device_tree:
                raise UnknownPeripheral(name)
            if self.peripheral_owner[name] != LOS:
                raise AlreadyConceded(name)
            desc = self._descriptor(to_handle)
            if not desc.live:
                raise NoSuchSapp(to_handle)
            self._set_peripheral_owner(name, desc.domain)
        except SimError as err:
            self.trace.emit(now, ACTOR_LOS, "concede_peripheral.err", reason=err.code)
            raise
        self.trace.emit(now, ACTOR_LOS, "concede_peripheral.ok", name=name, to=to_handle)

    def release_peripheral(self, name: str, caller: DomainId, now: int = 0) -> None:
        """Only the owning sapp may hand a peripheral back; the LOS cannot
        seize one."""
        actor = self._actor_of(caller)
        self.trace.emit(now, actor, "release_peripheral", name=name)
        try:
            if name not in self.machine.device_tree:
                raise UnknownPeripheral(name)
            owner = self.peripheral_owner[name]
            if owner.kind != "sapp" or owner != caller:
                raise NotOwner(name)
            self._set_peripheral_owner(name, LOS)
        except SimError as err:
            self.trace.emit(now, actor, "release_peripheral.err", reason=err.code)
            raise
        self.trace.emit(now, actor, "release_peripheral.ok", name=name)

    def _actor_of(self, domain: DomainId) -> str:
        if domain == LOS:
            return ACTOR_LOS
        if domain == SM:
            return ACTOR_SM
        for handle, desc in self.sapps.items():
            if desc.domain == domain:
                return handle
        return str(domain)

    # -- scheduling ---------------------------------------------------------

    def switch_to_sapp(self, handle: str, slice_ms: int, now: int = 0, runner=None) -> ControlReturn:
        """Transfer control to a runnable sapp for at most ``slice_ms``.

        ``runner(desc, slice_ms, now) -> (ran_ms, SliceEnd)`` supplies the
        sapp's behavior; without one the sapp consumes the full slice. The
        actual runtime is credited to the policy window containing ``now``,
        and a periodic check fires on the return path once one is due.
        """
        self.trace.emit(now, ACTOR_LOS, "switch_to_sapp", handle=handle, slice=slice_ms)
        try:
            self._require_unlocked_device()
            desc = self._descriptor(handle)
            if desc.state is not SappState.RUNNABLE:
                raise InvalidState(desc.state.value)
            if slice_ms < 0:
                raise BadRange("slice must be non-negative")
        except SimError as err:
            self.trace.emit(now, ACTOR_LOS, "switch_to_sapp.err", reason=err.code)
            raise
        desc.state = SappState.RUNNING
        self.current = desc.domain
        if runner is None:
            ran, reason = slice_ms, SliceEnd.SLICE_EXPIRED
        else:
            ran, reason = runner(desc, slice_ms, now)
        assert 0 <= ran <= slice_ms, "runner exceeded its slice"
        desc.state = SappState.RUNNABLE
        self.current = LOS
        self.ledger.credit(handle, desc.policy, now, ran)
        end = now + ran
        if end - self.last_check >= self.check_interval_ms:
            self.periodic_policy_check(end)
        self.trace.emit(end, ACTOR_LOS, "switch_to_sapp.ok", ran=ran, reason=reason.value)
        return ControlReturn(ran, reason)

    def note_context_switch(self, now: int) -> list[Sanction]:
        """LOS-internal context switches trap through the monitor; run the
        periodic check whenever one is due."""
        if check_due(self.last_check, now, self.check_interval_ms) is not CheckDueness.NOT_DUE:
            return self.periodic_policy_check(now)
        return []

    def periodic_policy_check(self, now: int = 0) -> list[Sanction]:
        """Judge every live sapp over all fully elapsed windows since the
        previous check; sanction deficits and late checks, escalating to a
        device lock at the configured threshold."""
        dueness = check_due(self.last_check, now, self.check_interval_ms)
        self.trace.emit(now, ACTOR_SM, "policy_check", dueness=dueness.value)
        sanctions: list[Sanction] = []
        if dueness is CheckDueness.OVERDUE:
            sanctions.append(
                self._sanction(
                    now,
                    SanctionCause.MISSED_CHECK,
                    gap=now - self.last_check,
                )
            )
        for desc in self.live_sapps():
            if not desc.policy.active:
                continue
            last_full = now // desc.policy.window_ms - 1
            if desc.next_window > last_full:
                continue
            for verdict in evaluate(
                self.ledger, desc.handle, desc.policy, desc.next_window, last_full
            ):
                if not verdict.compliant:
                    sanctions.append(
                        self._sanction(
                            now,
                            SanctionCause.POLICY_VIOLATION,
                            handle=desc.handle,
                            window=verdict.window_index,
                            deficit=verdict.deficit_ms,
                        )
                    )
            desc.next_window = last_full + 1
        if self.violation_count >= self.lock_threshold and not self.device_locked:
            self.device_locked = True
            cause = sanctions[-1].cause if sanctions else SanctionCause.POLICY_VIOLATION
            sanctions.append(Sanction(SanctionKind.DEVICE_LOCK, cause))
            self.trace.emit(
                now,
                ACTOR_SM,
                "sanction",
                kind=SanctionKind.DEVICE_LOCK.value,
                cause=cause.value,
                violations=self.violation_count,
            )
        self.last_check = now
        self.trace.emit(now, ACTOR_SM, "policy_check.ok", sanctions=len(sanctions))
        return sanctions

    def _sanction(self, now: int, cause: SanctionCause, **detail) -> Sanction:
        self.violation_count += 1
        self.trace.emit(
            now,
            ACTOR_SM,
            "sanction",
            kind=SanctionKind.USER_NOTIFICATION.value,
            cause=cause.value,
            **detail,
        )
        return Sanction(
            SanctionKind.USER_NOTIFICATION,
            cause,
            handle=detail.get("handle"),
            window_index=detail.get("window"),
            deficit_ms=detail.get("deficit"),
        )

    # -- attestation ----------------------------------------------------------

    def attest_sapp(self, handle: str, nonce: bytes, now: int = 0) -> attestation.AttestationReport:
        """Report over the stored creation-time measurement, bound to the
        caller's nonce and the current boot session."""
        self.trace.emit(now, ACTOR_SM, "attest_sapp", handle=handle, nonce=nonce)
        try:
            desc = self._descriptor(handle)
            if not desc.live:
                raise NoSuchSapp(handle)
        except SimError as err:
            self.trace.emit(now, ACTOR_SM, "attest_sapp.err", reason=err.code)
            raise
        report = attestation.build_report(
            desc.image_digest, nonce, self.boot_session, desc.mem.size, self.device_secret
        )
        self.trace.emit(now, ACTOR_SM, "report", **_report_fields(report))
        self.trace.emit(now, ACTOR_SM, "attestation_signal", handle=handle)
        self.trace.emit(now, ACTOR_SM, "attest_sapp.ok", handle=handle)
        return report

    # -- the LOS window into monitor state -------------------------------------

    def los_observable_view(self) -> LosView:
        entries = []
        for desc in sorted(self.live_sapps(), key=lambda d: d.handle):
            held = tuple(
                sorted(n for n, o in self.peripheral_owner.items() if o == desc.domain)
            )
            entries.append(
                LosViewEntry(
                    handle=desc.handle,
                    mem_size=desc.mem.size,
                    policy_min_ms=desc.policy.min_runtime_ms,
                    policy_window_ms=desc.policy.window_ms,
                    peripherals_held=held,
                    runtime_total_ms=self.ledger.total(desc.handle),
                )
            )
        return LosView(tuple(entries))


def _report_fields(report: attestation.AttestationReport) -> dict:
    return {
        "measurement": report.measurement.hex(),
        "nonce": report.nonce.hex(),
        "session": report.boot_session,
        "mem": report.mem_size,
        "tag": report.tag.hex(),
    }
