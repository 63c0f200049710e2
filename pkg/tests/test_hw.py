"""Machine model: protection entries, locks, reset, RAM and MMIO."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import smallstate
from sovsim.errors import BadRange, BadState, EntryLocked, OffsetOutOfRange, UnknownPeripheral
from sovsim.hw import (
    LOS,
    SM,
    AccessContext,
    AccessKind,
    FaultReason,
    Mode,
    PAGE_SIZE,
    PERMS_RW,
    PERMS_RWX,
    Perms,
    PhysRange,
    RAM_BASE,
    sapp_domain,
)

from conftest import make_machine

SM_CTX = AccessContext.for_domain(SM)
LOS_CTX = AccessContext.for_domain(LOS)
S1 = sapp_domain(1)
S1_CTX = AccessContext.for_domain(S1)

PAGE0 = PhysRange(RAM_BASE, PAGE_SIZE)
PAGE1 = PhysRange(RAM_BASE + PAGE_SIZE, PAGE_SIZE)


class TestPhysRange:
    def test_zero_size_rejected(self):
        with pytest.raises(BadRange):
            PhysRange(RAM_BASE, 0)

    def test_misaligned_rejected(self):
        with pytest.raises(BadRange):
            PhysRange(RAM_BASE + 1, PAGE_SIZE)
        with pytest.raises(BadRange):
            PhysRange(RAM_BASE, PAGE_SIZE + 8)

    def test_address_width_overflow_rejected(self):
        with pytest.raises(BadRange):
            PhysRange((1 << 56) - PAGE_SIZE, 2 * PAGE_SIZE)

    def test_contains(self):
        assert PAGE0.contains(RAM_BASE)
        assert PAGE0.contains(RAM_BASE + PAGE_SIZE - 1)
        assert not PAGE0.contains(RAM_BASE + PAGE_SIZE)


class TestAccessContext:
    def test_modes_are_bound_to_domains(self):
        assert AccessContext.for_domain(SM).mode is Mode.MACHINE
        assert AccessContext.for_domain(LOS).mode is Mode.SUPERVISOR
        assert AccessContext.for_domain(S1).mode is Mode.USER

    def test_mismatched_mode_rejected(self):
        with pytest.raises(ValueError):
            AccessContext(SM, Mode.SUPERVISOR)
        with pytest.raises(ValueError):
            AccessContext(LOS, Mode.MACHINE)


class TestCheckAccess:
    def test_user_mode_with_no_entry_faults(self, machine):
        res = machine.check_access(S1_CTX, RAM_BASE, AccessKind.READ)
        assert res.fault is FaultReason.NO_ENTRY

    def test_machine_mode_unlocked_entry_allowed(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        assert machine.check_access(SM_CTX, RAM_BASE, AccessKind.READ).allowed

    def test_machine_mode_locked_entry_faults(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RWX, S1)
        machine.lock_entry(0)
        res = machine.check_access(SM_CTX, RAM_BASE, AccessKind.READ)
        assert res.fault is FaultReason.LOCKED_AGAINST_SM

    def test_machine_mode_no_entry_allowed(self, machine):
        assert machine.check_access(SM_CTX, RAM_BASE, AccessKind.WRITE).allowed

    def test_perm_denied_before_owner(self, machine):
        machine.set_entry(0, PAGE0, Perms(read=True), S1)
        res = machine.check_access(LOS_CTX, RAM_BASE, AccessKind.WRITE)
        assert res.fault is FaultReason.PERM_DENIED

    def test_not_owner(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        res = machine.check_access(LOS_CTX, RAM_BASE, AccessKind.READ)
        assert res.fault is FaultReason.NOT_OWNER

    def test_owner_within_perms_allowed(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        assert machine.check_access(S1_CTX, RAM_BASE, AccessKind.READ).allowed
        assert machine.check_access(S1_CTX, RAM_BASE, AccessKind.WRITE).allowed
        res = machine.check_access(S1_CTX, RAM_BASE, AccessKind.EXECUTE)
        assert res.fault is FaultReason.PERM_DENIED

    def test_lowest_index_wins_overlap(self, machine):
        both = PhysRange(RAM_BASE, 2 * PAGE_SIZE)
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        machine.set_entry(1, both, PERMS_RW, LOS)
        # page0 resolves through entry 0 (sapp), page1 through entry 1 (LOS)
        assert machine.check_access(S1_CTX, RAM_BASE, AccessKind.READ).allowed
        assert machine.check_access(LOS_CTX, RAM_BASE, AccessKind.READ).fault is FaultReason.NOT_OWNER
        assert machine.check_access(LOS_CTX, RAM_BASE + PAGE_SIZE, AccessKind.READ).allowed

    def test_decision_is_pure(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        before = [(e.range, e.perms, e.owner, e.locked) for e in machine.entries]
        machine.check_access(LOS_CTX, RAM_BASE, AccessKind.WRITE)
        after = [(e.range, e.perms, e.owner, e.locked) for e in machine.entries]
        assert before == after


class TestEntryConfiguration:
    def test_set_entry_replaces(self, machine):
        machine.set_entry(2, PAGE0, PERMS_RW, S1)
        entry = machine.entries[2]
        assert (entry.range, entry.perms, entry.owner) == (PAGE0, PERMS_RW, S1)
        machine.set_entry(2, PAGE1, PERMS_RWX, LOS)
        assert machine.entries[2].range == PAGE1

    def test_set_locked_entry_rejected(self, machine):
        machine.set_entry(2, PAGE0, PERMS_RW, S1)
        machine.lock_entry(2)
        with pytest.raises(EntryLocked):
            machine.set_entry(2, PAGE1, PERMS_RW, S1)
        with pytest.raises(EntryLocked):
            machine.clear_entry(2)

    def test_set_entry_outside_backing_rejected(self, machine):
        outside = PhysRange(0x1000_0000, PAGE_SIZE)
        with pytest.raises(BadRange):
            machine.set_entry(0, outside, PERMS_RW, S1)

    def test_lock_unset_entry_is_bad_state(self, machine):
        with pytest.raises(BadState):
            machine.lock_entry(3)

    def test_lock_is_idempotent(self, machine):
        machine.set_entry(2, PAGE0, PERMS_RW, S1)
        machine.lock_entry(2)
        snapshot = (machine.entries[2].range, machine.entries[2].perms,
                    machine.entries[2].owner, machine.entries[2].locked)
        machine.lock_entry(2)
        assert snapshot == (machine.entries[2].range, machine.entries[2].perms,
                            machine.entries[2].owner, machine.entries[2].locked)

    def test_lock_then_sm_read_faults(self, machine):
        machine.set_entry(2, PAGE0, PERMS_RWX, S1)
        machine.lock_entry(2)
        res = machine.read(SM_CTX, RAM_BASE, 1)
        assert res.fault is FaultReason.LOCKED_AGAINST_SM


class TestFullReset:
    def test_reset_clears_locks(self, machine):
        machine.set_entry(2, PAGE0, PERMS_RW, S1)
        machine.lock_entry(2)
        machine.full_reset()
        machine.set_entry(2, PAGE1, PERMS_RW, LOS)  # works again
        assert machine.entries[2].range == PAGE1

    def test_reset_zeroes_ram_and_preserves_rom(self, machine):
        machine.write(SM_CTX, RAM_BASE, b"\xaa\xbb")
        tree_before = machine.device_tree
        machine.full_reset()
        assert machine.ram_bytes(PAGE0)[:2] == b"\x00\x00"
        assert machine.device_tree == tree_before

    def test_reset_increments_boot_session(self, machine):
        s0 = machine.boot_session
        machine.full_reset()
        assert machine.boot_session == s0 + 1

    def test_double_reset_same_state(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        machine.lock_entry(0)
        machine.full_reset()
        snap = [(e.range, e.perms, e.owner, e.locked) for e in machine.entries]
        ram = machine.ram_bytes(PAGE0)
        machine.full_reset()
        assert snap == [(e.range, e.perms, e.owner, e.locked) for e in machine.entries]
        assert ram == machine.ram_bytes(PAGE0)


class TestRam:
    def test_write_read_roundtrip(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        assert machine.write(S1_CTX, RAM_BASE + 8, b"hello").allowed
        res = machine.read(S1_CTX, RAM_BASE + 8, 5)
        assert res.value == b"hello"

    def test_span_crossing_entries_uses_weakest_page(self, machine):
        machine.set_entry(0, PAGE0, PERMS_RW, S1)
        machine.set_entry(1, PAGE1, PERMS_RW, LOS)
        # crosses from the sapp page into the LOS page
        res = machine.read(S1_CTX, RAM_BASE + PAGE_SIZE - 2, 4)
        assert res.fault is FaultReason.NOT_OWNER

    def test_unbacked_address_rejected(self, machine):
        with pytest.raises(BadRange):
            machine.read(SM_CTX, machine.ram.end, 1)

    def test_hw_wipe_bypasses_locks(self, machine):
        machine.write(SM_CTX, RAM_BASE, b"\xff\xff")
        machine.set_entry(0, PAGE0, PERMS_RWX, S1)
        machine.lock_entry(0)
        machine.hw_wipe(PAGE0)
        assert machine.ram_bytes(PAGE0) == bytes(PAGE_SIZE)


class TestMmio:
    def setup_method(self):
        self.machine = make_machine()
        self.ble = self.machine.device_tree.lookup("ble0")

    def test_owner_reads_value(self):
        self.machine.set_entry(0, self.ble.mmio, PERMS_RW, S1)
        self.machine.mmio_access(S1_CTX, "ble0", 3, AccessKind.WRITE, value=0x5A)
        res = self.machine.mmio_access(S1_CTX, "ble0", 3, AccessKind.READ)
        assert res.allowed and res.value == b"\x5a"

    def test_non_owner_faults_after_concession(self):
        self.machine.set_entry(0, self.ble.mmio, PERMS_RW, S1)
        res = self.machine.mmio_access(LOS_CTX, "ble0", 0, AccessKind.READ)
        assert res.fault is FaultReason.NOT_OWNER

    def test_unknown_peripheral(self):
        with pytest.raises(UnknownPeripheral):
            self.machine.mmio_access(LOS_CTX, "gps9", 0, AccessKind.READ)

    def test_offset_out_of_range(self):
        with pytest.raises(OffsetOutOfRange):
            self.machine.mmio_access(LOS_CTX, "ble0", PAGE_SIZE, AccessKind.READ)

    def test_mmio_state_survives_owner_swap(self):
        self.machine.set_entry(0, self.ble.mmio, PERMS_RW, LOS)
        self.machine.mmio_access(LOS_CTX, "ble0", 0, AccessKind.WRITE, value=7)
        self.machine.set_entry(0, self.ble.mmio, PERMS_RW, S1)
        res = self.machine.mmio_access(S1_CTX, "ble0", 0, AccessKind.READ)
        assert res.value == b"\x07"


# Randomized and exhaustive invariant checks ---------------------------------

_ops = st.one_of(
    st.tuples(
        st.just("set"),
        st.integers(0, 1),
        st.sampled_from(smallstate.RANGES),
        st.sampled_from(smallstate.PERMS),
        st.sampled_from(smallstate.OWNERS),
    ),
    st.tuples(st.just("lock"), st.integers(0, 1)),
    st.tuples(st.just("clear"), st.integers(0, 1)),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(_ops, max_size=12))
def test_random_sequences_uphold_invariants(ops):
    machine = smallstate.fresh_machine()
    rom = machine.device_tree
    locked_ever = set()
    for op in ops:
        try:
            if op[0] == "set":
                machine.set_entry(op[1], op[2], op[3], op[4])
            elif op[0] == "lock":
                machine.lock_entry(op[1])
            else:
                machine.clear_entry(op[1])
        except (EntryLocked, BadState):
            pass
        for entry in machine.entries:
            if entry.locked:
                locked_ever.add(entry.index)
            assert entry.index not in locked_ever or entry.locked, "lock monotonicity broken"
        assert not smallstate.check_state_invariants(machine, rom)


def test_exhaustive_small_state_depth3():
    stats = smallstate.explore(max_len=3)
    assert stats["states"] > 1
    assert stats["transitions"] > 0
