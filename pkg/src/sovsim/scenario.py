"""Scenario files: the JSON schema, strict validation, and defaults.

Unknown fields are errors, not warnings; everything a run depends on is
either stated in the file or filled from a fixed default, so a scenario
file plus a seed pins the trace bytes exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from . import domains
from .errors import InfeasiblePolicies, ParseError, SchemaViolation
from .hw import DEFAULT_PROT_ENTRIES, PAGE_SIZE, Peripheral, PhysRange, RAM_BASE
from .policy import SchedulingPolicy

DEFAULT_RAM_SIZE = 16 * 1024 * 1024
DEFAULT_MMIO_BASE = 0x4000_0000
DEFAULT_UNTIL_MS = 1000
DEFAULT_QUANTUM_MS = 10

_STRATEGIES = ("cooperative", "starver", "selective_dos", "inspector", "policy_cheater", "no_check")
_ACTIONS = ("create", "destroy", "attest", "reset")


@dataclass(frozen=True)
class SimConfig:
    check_interval_ms: int = 100
    lock_threshold: int = 3
    quantum_ms: int = DEFAULT_QUANTUM_MS


@dataclass(frozen=True)
class LosSpec:
    strategy: domains.LosStrategy
    initial_memory: int


@dataclass(frozen=True)
class SappSpec:
    image: bytes
    mem_size: int
    policy: SchedulingPolicy
    peripherals: tuple[str, ...]
    behavior: domains.SappBehavior


@dataclass(frozen=True)
class ScriptAction:
    t_ms: int
    action: str
    sapp: int | None = None
    nonce: bytes | None = None


@dataclass(frozen=True)
class Scenario:
    ram_size: int = DEFAULT_RAM_SIZE
    prot_entries: int = DEFAULT_PROT_ENTRIES
    device_tree: tuple[Peripheral, ...] = ()
    seed: int = 0
    config: SimConfig = field(default_factory=SimConfig)
    los: LosSpec = field(default_factory=lambda: LosSpec(domains.Cooperative(), DEFAULT_RAM_SIZE // 2))
    sapps: tuple[SappSpec, ...] = ()
    script: tuple[ScriptAction, ...] = ()
    until_ms: int = DEFAULT_UNTIL_MS
    unlockable_entries: frozenset[int] = frozenset()

    def with_overrides(self, seed: int | None = None, until_ms: int | None = None) -> "Scenario":
        out = self
        if seed is not None:
            out = replace(out, seed=seed)
        if until_ms is not None:
            out = replace(out, until_ms=until_ms)
        return out


def default_device_tree() -> tuple[Peripheral, ...]:
    return (Peripheral("ble0", "1.0", PhysRange(DEFAULT_MMIO_BASE, PAGE_SIZE)),)


class _Fields:
    """Field-at-a-time reader that rejects anything it was not asked for."""

    def __init__(self, raw: object, where: str):
        if not isinstance(raw, dict):
            raise SchemaViolation(f"{where} must be an object")
        self._raw = dict(raw)
        self._where = where

    def take(self, name: str, kind: type, default=None, required: bool = False):
        if name not in self._raw:
            if required:
                raise SchemaViolation(f"missing field '{name}' in {self._where}")
            return default
        value = self._raw.pop(name)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is int:
            raise SchemaViolation(
                f"field '{name}' in {self._where} must be a {kind.__name__}"
            )
        return value

    def finish(self) -> None:
        for leftover in self._raw:
            raise SchemaViolation(f"unknown field '{leftover}' in {self._where}")


def _hex_bytes(text: str, name: str, where: str, size: int | None = None) -> bytes:
    try:
        data = bytes.fromhex(text)
    except ValueError as err:
        raise SchemaViolation(f"field '{name}' in {where} is not valid hex: {err}") from None
    if size is not None and len(data) != size:
        raise SchemaViolation(f"field '{name}' in {where} must be {size} bytes of hex")
    return data


def _page_multiple(value: int, name: str, where: str) -> int:
    if value <= 0 or value % PAGE_SIZE:
        raise SchemaViolation(
            f"field '{name}' in {where} must be a positive multiple of {PAGE_SIZE}"
        )
    return value


def _parse_policy(raw: object, where: str) -> SchedulingPolicy:
    f = _Fields(raw, where)
    min_ms = f.take("min_runtime_ms", int, required=True)
    window_ms = f.take("window_ms", int, required=True)
    f.finish()
    try:
        return SchedulingPolicy(min_ms, window_ms)
    except ValueError as err:
        raise SchemaViolation(f"{where}: {err}") from None


def _parse_behavior(raw: object, where: str) -> domains.SappBehavior:
    f = _Fields(raw, where)
    kind = f.take("kind", str, required=True)
    if kind == "compute":
        yield_after = f.take("yield_after_ms", int, required=True)
        f.finish()
        if yield_after < 0:
            raise SchemaViolation(f"{where}: yield_after_ms must be non-negative")
        return domains.ComputeOnly(yield_after)
    if kind == "peripheral":
        name = f.take("name", str, required=True)
        ops = f.take("ops_per_slice", int, required=True)
        f.finish()
        if ops < 0:
            raise SchemaViolation(f"{where}: ops_per_slice must be non-negative")
        return domains.PeripheralUser(name, ops)
    if kind == "memory_probe":
        addrs = f.take("addresses", list, required=True)
        f.finish()
        if not all(isinstance(a, int) and not isinstance(a, bool) for a in addrs):
            raise SchemaViolation(f"{where}: addresses must be integers")
        return domains.MemoryProbe(tuple(addrs))
    raise SchemaViolation(f"{where}: unknown behavior kind '{kind}'")


def _parse_strategy(name: str, params: object, where: str, n_sapps: int) -> domains.LosStrategy:
    f = _Fields(params, where)
    try:
        if name == "cooperative":
            f.finish()
            return domains.Cooperative()
        if name == "starver":
            targets = f.take("targets", list, required=True)
            f.finish()
            _check_indexes(targets, n_sapps, where)
            return domains.Starver(tuple(targets))
        if name == "selective_dos":
            target = f.take("target", int, required=True)
            duty = f.take("duty", float, required=True)
            f.finish()
            _check_indexes([target], n_sapps, where)
            return domains.SelectiveDoS(target, duty)
        if name == "inspector":
            addrs = f.take("probe_addrs", list, default=[])
            f.finish()
            if not all(isinstance(a, int) and not isinstance(a, bool) for a in addrs):
                raise SchemaViolation(f"{where}: probe_addrs must be integers")
            return domains.Inspector(tuple(addrs))
        if name == "policy_cheater":
            fraction = f.take("fraction", float, required=True)
            f.finish()
            return domains.PolicyCheater(fraction)
        if name == "no_check":
            gap = f.take("gap_ms", int, default=250)
            f.finish()
            if gap <= 0:
                raise SchemaViolation(f"{where}: gap_ms must be positive")
            return domains.NoCheckLOS(gap)
    except ValueError as err:
        raise SchemaViolation(f"{where}: {err}") from None
    raise SchemaViolation(
        f"{where}: unknown strategy '{name}' (expected one of {', '.join(_STRATEGIES)})"
    )


def _check_indexes(indexes: list, n_sapps: int, where: str) -> None:
    for i in indexes:
        if not isinstance(i, int) or isinstance(i, bool) or not 0 <= i < n_sapps:
            raise SchemaViolation(f"{where}: sapp index {i!r} out of range")


def scenario_from_dict(raw: object) -> Scenario:
    top = _Fields(raw, "scenario")
    ram_size = _page_multiple(top.take("ram_size", int, DEFAULT_RAM_SIZE), "ram_size", "scenario")
    prot_entries = top.take("prot_entries", int, DEFAULT_PROT_ENTRIES)
    if prot_entries <= 0:
        raise SchemaViolation("prot_entries must be positive")
    seed = top.take("seed", int, 0)
    until_ms = top.take("until_ms", int, DEFAULT_UNTIL_MS)
    if until_ms <= 0:
        raise SchemaViolation("until_ms must be positive")

    raw_tree = top.take("device_tree", list)
    if raw_tree is None:
        device_tree = default_device_tree()
    else:
        device_tree = []
        for i, entry in enumerate(raw_tree):
            f = _Fields(entry, f"device_tree[{i}]")
            name = f.take("name", str, required=True)
            version = f.take("version", str, default="1.0")
            base = f.take("mmio_base", int, required=True)
            size = _page_multiple(
                f.take("mmio_size", int, PAGE_SIZE), "mmio_size", f"device_tree[{i}]"
            )
            f.finish()
            if base % PAGE_SIZE:
                raise SchemaViolation(f"device_tree[{i}]: mmio_base must be page aligned")
            device_tree.append(Peripheral(name, version, PhysRange(base, size)))
        device_tree = tuple(device_tree)
        names = [p.name for p in device_tree]
        if len(set(names)) != len(names):
            raise SchemaViolation("device_tree names must be unique")

    cfg_f = _Fields(top.take("config", dict, {}), "config")
    config = SimConfig(
        check_interval_ms=cfg_f.take("check_interval_ms", int, 100),
        lock_threshold=cfg_f.take("lock_threshold", int, 3),
        quantum_ms=cfg_f.take("quantum_ms", int, DEFAULT_QUANTUM_MS),
    )
    cfg_f.finish()
    if config.check_interval_ms <= 0 or config.lock_threshold <= 0 or config.quantum_ms <= 0:
        raise SchemaViolation("config values must be positive")

    raw_sapps = top.take("sapps", list, [])
    tree_names = {p.name for p in device_tree}
    sapps = []
    for i, entry in enumerate(raw_sapps):
        where = f"sapps[{i}]"
        f = _Fields(entry, where)
        image = _hex_bytes(f.take("image_hex", str, ""), "image_hex", where)
        mem_size = _page_multiple(f.take("mem_size", int, required=True), "mem_size", where)
        policy = _parse_policy(f.take("policy", dict, required=True), f"{where}.policy")
        periphs = f.take("peripherals", list, [])
        behavior = _parse_behavior(f.take("behavior", dict, required=True), f"{where}.behavior")
        f.finish()
        if not all(isinstance(p, str) for p in periphs):
            raise SchemaViolation(f"{where}: peripherals must be names")
        for p in periphs:
            if p not in tree_names:
                raise SchemaViolation(f"{where}: peripheral '{p}' not in device_tree")
        if len(image) > mem_size:
            raise SchemaViolation(f"{where}: image larger than mem_size")
        sapps.append(SappSpec(image, mem_size, policy, tuple(sorted(periphs)), behavior))
    sapps = tuple(sapps)

    load = sum((Fraction(s.policy.min_runtime_ms, s.policy.window_ms) for s in sapps), Fraction(0))
    if load > 1:
        raise InfeasiblePolicies(f"combined policy demand {load} exceeds the whole machine")

    # Boot consumes one entry for LOS memory and one per peripheral; every
    # sapp consumes one entry that stays locked for the session.
    free_entries = prot_entries - 1 - len(device_tree)
    if len(sapps) > free_entries:
        raise SchemaViolation(
            f"{len(sapps)} sapps exceed the {free_entries} protection entries free after boot"
        )

    los_f = _Fields(top.take("los", dict, {}), "los")
    strategy_name = los_f.take("strategy", str, "cooperative")
    params = los_f.take("params", dict, {})
    initial_memory = _page_multiple(
        los_f.take("initial_memory", int, ram_size // 2), "initial_memory", "los"
    )
    los_f.finish()
    if initial_memory > ram_size:
        raise SchemaViolation("los initial_memory exceeds ram_size")
    los = LosSpec(_parse_strategy(strategy_name, params, "los.params", len(sapps)), initial_memory)

    raw_script = top.take("script", list)
    if raw_script is None:
        script = tuple(ScriptAction(0, "create", sapp=i) for i in range(len(sapps)))
    else:
        script = []
        for i, entry in enumerate(raw_script):
            where = f"script[{i}]"
            f = _Fields(entry, where)
            t_ms = f.take("t_ms", int, required=True)
            action = f.take("action", str, required=True)
            sapp = f.take("sapp", int)
            nonce_hex = f.take("nonce", str)
            f.finish()
            if t_ms < 0:
                raise SchemaViolation(f"{where}: t_ms must be non-negative")
            if action not in _ACTIONS:
                raise SchemaViolation(f"{where}: unknown action '{action}'")
            if action != "reset":
                _check_indexes([sapp], len(sapps), where)
            nonce = _hex_bytes(nonce_hex, "nonce", where, 32) if nonce_hex is not None else None
            script.append(ScriptAction(t_ms, action, sapp=sapp, nonce=nonce))
        script = tuple(sorted(script, key=lambda a: a.t_ms))

    hooks_f = _Fields(top.take("test_hooks", dict, {}), "test_hooks")
    unlockable = hooks_f.take("unlockable_entries", list, [])
    hooks_f.finish()
    if not all(isinstance(i, int) and not isinstance(i, bool) for i in unlockable):
        raise SchemaViolation("test_hooks.unlockable_entries must be integers")

    top.finish()
    return Scenario(
        ram_size=ram_size,
        prot_entries=prot_entries,
        device_tree=device_tree,
        seed=seed,
        config=config,
        los=los,
        sapps=sapps,
        script=script,
        until_ms=until_ms,
        unlockable_entries=frozenset(unlockable),
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ParseError(str(err)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}:{err.lineno}: {err.msg}") from None
    return scenario_from_dict(raw)
