"""Exhaustive small-state exploration of the protection-entry model.

A 2-entry, 2-page machine with three domains (monitor, LOS, one sapp) is
small enough to enumerate completely. States reachable by configuration
sequences are explored breadth-first with deduplication, which covers
every operation sequence up to the requested length: two sequences that
reach the same entry state have identical futures and identical access
decisions. full_reset is deliberately absent from the alphabet; the point
is that nothing else clears a lock or restores monitor access.
"""

from __future__ import annotations

from dataclasses import dataclass

from sovsim.errors import SimError
from sovsim.hw import (
    LOS,
    SM,
    AccessContext,
    AccessKind,
    DeviceTree,
    Machine,
    PAGE_SIZE,
    Peripheral,
    Perms,
    PhysRange,
    sapp_domain,
)

RAM = PhysRange(0x8000_0000, 2 * PAGE_SIZE)
PAGES = (RAM.base, RAM.base + PAGE_SIZE)
RANGES = (
    PhysRange(RAM.base, PAGE_SIZE),
    PhysRange(RAM.base + PAGE_SIZE, PAGE_SIZE),
    PhysRange(RAM.base, 2 * PAGE_SIZE),
)
PERMS = (Perms(True, True, False), Perms(True, True, True))
OWNERS = (LOS, sapp_domain(1))
DOMAINS = (SM, LOS, sapp_domain(1))
KINDS = (AccessKind.READ, AccessKind.WRITE, AccessKind.EXECUTE)


@dataclass(frozen=True)
class Op:
    name: str
    index: int
    range_i: int = -1
    perms_i: int = -1
    owner_i: int = -1

    def apply(self, machine: Machine) -> None:
        if self.name == "set":
            machine.set_entry(
                self.index, RANGES[self.range_i], PERMS[self.perms_i], OWNERS[self.owner_i]
            )
        elif self.name == "lock":
            machine.lock_entry(self.index)
        else:
            machine.clear_entry(self.index)


def op_alphabet() -> list[Op]:
    ops = []
    for idx in (0, 1):
        for ri in range(len(RANGES)):
            for pi in range(len(PERMS)):
                for oi in range(len(OWNERS)):
                    ops.append(Op("set", idx, ri, pi, oi))
        ops.append(Op("lock", idx))
        ops.append(Op("clear", idx))
    return ops


def fresh_machine() -> Machine:
    tree = DeviceTree([Peripheral("dev0", "1.0", PhysRange(0x4000_0000, PAGE_SIZE))])
    return Machine(RAM.size, tree, prot_entries=2)


def state_key(machine: Machine):
    return tuple(
        (e.range, e.perms, e.owner, e.locked) for e in machine.entries
    )


def restore(machine: Machine, key) -> None:
    for entry, (rng, perms, owner, locked) in zip(machine.entries, key):
        entry.range = rng
        entry.perms = perms
        entry.owner = owner
        entry.locked = locked


def _lowest_match(machine: Machine, addr: int):
    for entry in machine.entries:
        if entry.range is not None and entry.range.contains(addr):
            return entry
    return None


def check_state_invariants(machine: Machine, rom_snapshot) -> list[str]:
    """Lock exclusion, default deny, and owner gating over every
    (domain, page, kind) triple, plus ROM immutability. Expected decisions
    are recomputed here from the stated rules, not taken from the model."""
    failures = []
    for addr in PAGES:
        match = _lowest_match(machine, addr)
        for domain in DOMAINS:
            ctx = AccessContext.for_domain(domain)
            for kind in KINDS:
                res = machine.check_access(ctx, addr, kind)
                if domain == SM:
                    expect = match is None or not match.locked
                else:
                    expect = (
                        match is not None
                        and match.perms.grants(kind)
                        and match.owner == domain
                    )
                if res.allowed != expect:
                    failures.append(
                        f"{domain} {kind.value} at {addr:#x}: got {res}, expected "
                        f"{'Allowed' if expect else 'Fault'}"
                    )
    if machine.device_tree != rom_snapshot:
        failures.append("device tree changed")
    return failures


def explore(max_len: int) -> dict:
    """BFS to depth ``max_len``; returns exploration statistics. Raises
    AssertionError with the offending sequence on any invariant breach."""
    machine = fresh_machine()
    rom = machine.device_tree
    ops = op_alphabet()
    start = state_key(machine)
    seen = {start}
    frontier = [(start, ())]
    stats = {"states": 1, "transitions": 0, "depth": 0}

    failures = check_state_invariants(machine, rom)
    assert not failures, failures

    for depth in range(1, max_len + 1):
        next_frontier = []
        for key, path in frontier:
            for op in ops:
                restore(machine, key)
                locked_before = [(e.locked, e.range, e.perms, e.owner) for e in machine.entries]
                try:
                    op.apply(machine)
                except SimError:
                    pass  # rejected ops must leave state unchanged
                stats["transitions"] += 1
                seq = path + (op,)
                for (was_locked, rng, perms, owner), entry in zip(locked_before, machine.entries):
                    assert not (was_locked and not entry.locked), f"lock cleared by {seq}"
                    if was_locked:
                        assert (entry.range, entry.perms, entry.owner) == (rng, perms, owner), \
                            f"locked entry reconfigured by {seq}"
                new_key = state_key(machine)
                if new_key in seen:
                    continue
                bad = check_state_invariants(machine, rom)
                assert not bad, f"after {seq}: {bad}"
                seen.add(new_key)
                next_frontier.append((new_key, seq))
        frontier = next_frontier
        stats["depth"] = depth
        stats["states"] = len(seen)
        if not frontier:
            break
    return stats
