"""Single-hart machine model: RAM, privilege modes, lockable protection
entries bound to isolation domains, a ROM device tree, and MMIO peripherals.

Protection entries gate physical addresses per domain. An entry may be
locked with a sticky bit: a locked entry freezes its configuration and
denies all machine-mode (monitor) data access to its range until a full
system reset. Supervisor/user accesses are default-deny: they succeed only
through an entry owned by the accessing domain whose permissions grant the
access kind.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import (
    BadRange,
    BadState,
    EntryLocked,
    OffsetOutOfRange,
    UnknownPeripheral,
)

PAGE_SIZE = 4096
PHYS_ADDR_BITS = 56
RAM_BASE = 0x8000_0000
DEFAULT_PROT_ENTRIES = 16


class Mode(enum.Enum):
    MACHINE = "Machine"
    SUPERVISOR = "Supervisor"
    USER = "User"


class AccessKind(enum.Enum):
    READ = "Read"
    WRITE = "Write"
    EXECUTE = "Execute"


class FaultReason(enum.Enum):
    NO_ENTRY = "NoEntry"
    PERM_DENIED = "PermDenied"
    NOT_OWNER = "NotOwner"
    LOCKED_AGAINST_SM = "LockedAgainstSM"


@dataclass(frozen=True)
class DomainId:
    """An isolation domain: the monitor, the legacy OS, or one sapp."""

    kind: str  # "sm" | "los" | "sapp"
    sapp_id: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("sm", "los", "sapp"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "sapp" and self.sapp_id <= 0:
            raise ValueError("sapp ids are positive")
        if self.kind != "sapp" and self.sapp_id != 0:
            raise ValueError("only sapp domains carry an id")

    @property
    def mode(self) -> Mode:
        if self.kind == "sm":
            return Mode.MACHINE
        if self.kind == "los":
            return Mode.SUPERVISOR
        return Mode.USER

    def __str__(self) -> str:
        if self.kind == "sapp":
            return f"sapp{self.sapp_id}"
        return self.kind.upper()


SM = DomainId("sm")
LOS = DomainId("los")


def sapp_domain(sapp_id: int) -> DomainId:
    return DomainId("sapp", sapp_id)


@dataclass(frozen=True)
class AccessContext:
    """Who is accessing, at which privilege mode.

    The mode is a function of the actor; a mismatched pair is rejected.
    """

    actor: DomainId
    mode: Mode

    def __post_init__(self) -> None:
        if self.mode is not self.actor.mode:
            raise ValueError(f"{self.actor} cannot run in {self.mode.value} mode")

    @classmethod
    def for_domain(cls, actor: DomainId) -> "AccessContext":
        return cls(actor, actor.mode)


@dataclass(frozen=True)
class PhysRange:
    """A page-aligned physical address range [base, base + size)."""

    base: int
    size: int

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise BadRange(f"size {self.size} must be positive")
        if self.base % PAGE_SIZE or self.size % PAGE_SIZE:
            raise BadRange(
                f"base {self.base:#x} / size {self.size:#x} not multiples of {PAGE_SIZE}"
            )
        if self.base < 0 or self.base + self.size > 1 << PHYS_ADDR_BITS:
            raise BadRange(f"range {self.base:#x}+{self.size:#x} exceeds address width")

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end

    def contains_range(self, other: "PhysRange") -> bool:
        return self.base <= other.base and other.end <= self.end

    def overlaps(self, other: "PhysRange") -> bool:
        return self.base < other.end and other.base < self.end

    def __str__(self) -> str:
        return f"[{self.base:#x},+{self.size:#x})"


@dataclass(frozen=True)
class Perms:
    read: bool = False
    write: bool = False
    execute: bool = False

    def grants(self, kind: AccessKind) -> bool:
        if kind is AccessKind.READ:
            return self.read
        if kind is AccessKind.WRITE:
            return self.write
        return self.execute

    def __str__(self) -> str:
        return (
            ("r" if self.read else "-")
            + ("w" if self.write else "-")
            + ("x" if self.execute else "-")
        )


PERMS_RWX = Perms(True, True, True)
PERMS_RW = Perms(True, True, False)
PERMS_R = Perms(True, False, False)
PERMS_NONE = Perms()


@dataclass
class ProtEntry:
    """One protection entry. ``range is None`` means unconfigured."""

    index: int
    range: PhysRange | None = None
    perms: Perms = PERMS_NONE
    owner: DomainId | None = None
    locked: bool = False

    @property
    def configured(self) -> bool:
        return self.range is not None


@dataclass(frozen=True)
class Peripheral:
    name: str
    version: str
    mmio: PhysRange


class DeviceTree:
    """Immutable ROM description of the SoC's peripherals."""

    def __init__(self, peripherals: list[Peripheral] | tuple[Peripheral, ...]):
        names = [p.name for p in peripherals]
        if len(set(names)) != len(names):
            raise BadRange("device tree peripheral names must be unique")
        for i, a in enumerate(peripherals):
            for b in list(peripherals)[i + 1:]:
                if a.mmio.overlaps(b.mmio):
                    raise BadRange(f"MMIO ranges of {a.name} and {b.name} overlap")
        self._peripherals = tuple(peripherals)

    @property
    def peripherals(self) -> tuple[Peripheral, ...]:
        return self._peripherals

    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self._peripherals)

    def lookup(self, name: str) -> Peripheral:
        for p in self._peripherals:
            if p.name == name:
                return p
        raise UnknownPeripheral(name)

    def __contains__(self, name: str) -> bool:
        return any(p.name == name for p in self._peripherals)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DeviceTree) and self._peripherals == other._peripherals

    def __hash__(self) -> int:
        return hash(self._peripherals)


@dataclass(frozen=True)
class AccessResult:
    """Outcome of a modeled access. ``fault is None`` means allowed."""

    fault: FaultReason | None = None
    value: bytes | None = None

    @property
    def allowed(self) -> bool:
        return self.fault is None

    def __str__(self) -> str:
        return "Allowed" if self.allowed else f"Fault({self.fault.value})"


ALLOWED = AccessResult()


class Machine:
    """The simulated hardware. Entry configuration methods model
    machine-mode register writes and are only called by the monitor.
    """

    def __init__(
        self,
        ram_size: int,
        device_tree: DeviceTree,
        prot_entries: int = DEFAULT_PROT_ENTRIES,
        unlockable_entries: frozenset[int] = frozenset(),
    ):
        if ram_size <= 0 or ram_size % PAGE_SIZE:
            raise BadRange(f"ram_size {ram_size} must be a positive page multiple")
        self.ram = PhysRange(RAM_BASE, ram_size)
        for p in device_tree.peripherals:
            if p.mmio.overlaps(self.ram):
                raise BadRange(f"peripheral {p.name} MMIO overlaps RAM")
        self.device_tree = device_tree
        self.entries = [ProtEntry(i) for i in range(prot_entries)]
        self.boot_session = 1
        self._ram = bytearray(ram_size)
        self._mmio = {p.name: bytearray(p.mmio.size) for p in device_tree.peripherals}
        # Fault-injection hook for the property suites: a listed entry takes
        # the sticky bit but never enforces it against machine mode.
        self._unlockable = unlockable_entries

    # -- decision ------------------------------------------------------

    def check_access(self, ctx: AccessContext, addr: int, kind: AccessKind) -> AccessResult:
        """Decide one access. Pure: no state is touched.

        The matching entry is the lowest-index configured entry containing
        ``addr``. Machine mode passes unless that entry is locked; the other
        modes require a matching entry owned by the actor whose permissions
        grant ``kind``.
        """
        if not 0 <= addr < (1 << PHYS_ADDR_BITS):
            raise BadRange(f"address {addr:#x} exceeds address width")
        entry = self._match(addr)
        if ctx.mode is Mode.MACHINE:
            if entry is not None and entry.locked and entry.index not in self._unlockable:
                return AccessResult(FaultReason.LOCKED_AGAINST_SM)
            return ALLOWED
        if entry is None:
            return AccessResult(FaultReason.NO_ENTRY)
        if not entry.perms.grants(kind):
            return AccessResult(FaultReason.PERM_DENIED)
        if entry.owner != ctx.actor:
            return AccessResult(FaultReason.NOT_OWNER)
        return ALLOWED

    def _match(self, addr: int) -> ProtEntry | None:
        for entry in self.entries:
            if entry.range is not None and entry.range.contains(addr):
                return entry
        return None

    # -- entry configuration (machine mode only) ------------------------

    def set_entry(self, index: int, rng: PhysRange, perms: Perms, owner: DomainId) -> None:
        entry = self._entry(index)
        if entry.locked:
            raise EntryLocked(f"entry {index}")
        if not (self.ram.contains_range(rng) or self._in_mmio_window(rng)):
            raise BadRange(f"{rng} lies outside RAM and all MMIO windows")
        entry.range = rng
        entry.perms = perms
        entry.owner = owner

    def clear_entry(self, index: int) -> None:
        entry = self._entry(index)
        if entry.locked:
            raise EntryLocked(f"entry {index}")
        entry.range = None
        entry.perms = PERMS_NONE
        entry.owner = None

    def lock_entry(self, index: int) -> None:
        """Set the sticky bit. Idempotent; only full_reset clears it."""
        entry = self._entry(index)
        if not entry.configured:
            raise BadState(f"entry {index} is not configured")
        entry.locked = True

    def full_reset(self) -> None:
        """Full system reset: entries cleared and unlocked, RAM zeroed,
        ROM preserved, boot-session counter incremented."""
        for entry in self.entries:
            entry.range = None
            entry.perms = PERMS_NONE
            entry.owner = None
            entry.locked = False
        self._ram = bytearray(len(self._ram))
        for name in self._mmio:
            self._mmio[name] = bytearray(len(self._mmio[name]))
        self.boot_session += 1

    def _entry(self, index: int) -> ProtEntry:
        if not 0 <= index < len(self.entries):
            raise BadRange(f"entry index {index} out of range")
        return self.entries[index]

    def _in_mmio_window(self, rng: PhysRange) -> bool:
        return any(p.mmio.contains_range(rng) for p in self.device_tree.peripherals)

    def free_entry_index(self) -> int | None:
        for entry in self.entries:
            if not entry.configured and not entry.locked:
                return entry.index
        return None

    # -- RAM ------------------------------------------------------------

    def read(self, ctx: AccessContext, addr: int, size: int = 1) -> AccessResult:
        res = self._check_span(ctx, addr, size, AccessKind.READ)
        if not res.allowed:
            return res
        off = addr - self.ram.base
        return AccessResult(value=bytes(self._ram[off:off + size]))

    def write(self, ctx: AccessContext, addr: int, data: bytes) -> AccessResult:
        res = self._check_span(ctx, addr, len(data), AccessKind.WRITE)
        if not res.allowed:
            return res
        off = addr - self.ram.base
        self._ram[off:off + len(data)] = data
        return ALLOWED

    def _check_span(self, ctx: AccessContext, addr: int, size: int, kind: AccessKind) -> AccessResult:
        if size <= 0:
            raise BadRange("access size must be positive")
        if not (self.ram.contains(addr) and addr + size <= self.ram.end):
            raise BadRange(f"[{addr:#x},+{size:#x}) is not backed by RAM")
        # Entries are page-aligned, so the decision is uniform per page.
        page = addr - (addr % PAGE_SIZE)
        while page < addr + size:
            res = self.check_access(ctx, max(page, addr), kind)
            if not res.allowed:
                return res
            page += PAGE_SIZE
        return ALLOWED

    def hw_wipe(self, rng: PhysRange) -> None:
        """One-shot hardware zeroization. Bypasses protection entries;
        used for scrubbing regions the monitor itself cannot touch."""
        if not self.ram.contains_range(rng):
            raise BadRange(f"{rng} is not backed by RAM")
        off = rng.base - self.ram.base
        self._ram[off:off + rng.size] = bytes(rng.size)

    def ram_bytes(self, rng: PhysRange) -> bytes:
        """Debug/test peek without an access check."""
        if not self.ram.contains_range(rng):
            raise BadRange(f"{rng} is not backed by RAM")
        off = rng.base - self.ram.base
        return bytes(self._ram[off:off + rng.size])

    # -- MMIO -------------------------------------------------------------

    def mmio_access(
        self,
        ctx: AccessContext,
        peripheral_name: str,
        offset: int,
        kind: AccessKind,
        value: int = 0,
    ) -> AccessResult:
        """Byte-wide access to a peripheral register file."""
        peripheral = self.device_tree.lookup(peripheral_name)
        if not 0 <= offset < peripheral.mmio.size:
            raise OffsetOutOfRange(f"{peripheral_name} offset {offset}")
        res = self.check_access(ctx, peripheral.mmio.base + offset, kind)
        if not res.allowed:
            return res
        regs = self._mmio[peripheral_name]
        if kind is AccessKind.WRITE:
            regs[offset] = value & 0xFF
            return ALLOWED
        return AccessResult(value=bytes([regs[offset]]))
