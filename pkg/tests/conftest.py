import random

import pytest

from sovsim.hw import (
    DeviceTree,
    Machine,
    PAGE_SIZE,
    Peripheral,
    PhysRange,
)
from sovsim.monitor import SecurityMonitor
from sovsim.trace import Trace

MMIO_BASE = 0x4000_0000
RAM_SIZE = 4 * 1024 * 1024
LOS_MEM = 2 * 1024 * 1024
SECRET = bytes(range(32))


def make_machine(prot_entries: int = 16, peripherals: tuple[str, ...] = ("ble0", "gps0")):
    tree = DeviceTree(
        [
            Peripheral(name, "1.0", PhysRange(MMIO_BASE + i * PAGE_SIZE, PAGE_SIZE))
            for i, name in enumerate(peripherals)
        ]
    )
    return Machine(RAM_SIZE, tree, prot_entries)


def make_monitor(machine=None, seed: int = 1, pool_bytes: int = 512 * 1024, **kwargs):
    """Monitor on a small machine with a donated pool ready for creates."""
    machine = machine or make_machine()
    monitor = SecurityMonitor(
        machine,
        PhysRange(machine.ram.base, LOS_MEM),
        SECRET,
        random.Random(seed),
        Trace(),
        **kwargs,
    )
    if pool_bytes:
        base = machine.ram.base + LOS_MEM - pool_bytes
        monitor.donate_memory(PhysRange(base, pool_bytes))
    return monitor


@pytest.fixture
def machine():
    return make_machine()


@pytest.fixture
def monitor():
    return make_monitor()
