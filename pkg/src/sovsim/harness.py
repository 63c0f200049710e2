"""Deterministic event loop over a scenario, plus the property checker.

Time advances in fixed scheduling quanta. Each quantum the harness runs
due script actions, lets the LOS strategy fire probes and grant sapp
slices, and ends with the LOS trapping into the monitor (unless the
strategy suppresses traps). All nondeterminism comes from one PRNG seeded
by the scenario, so a scenario file pins its trace bytes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from . import domains
from .attestation import AttestationReport
from .errors import InsufficientMemory, SimError
from .hw import LOS, SM, AccessContext, AccessKind, DeviceTree, Machine, PhysRange, RAM_BASE
from .monitor import SecurityMonitor
from .policy import SchedulingPolicy
from .scenario import SappSpec, Scenario, ScriptAction
from .trace import ACTOR_SM, Trace, canonicalize_handles, los_visible

SM_CTX = AccessContext.for_domain(SM)


@dataclass
class SimResult:
    trace: Trace
    machine: Machine
    monitor: SecurityMonitor
    handles: dict[int, str]
    reports: list[tuple[int, AttestationReport]] = field(default_factory=list)
    attest_report: AttestationReport | None = None


class Simulation:
    def __init__(self, scenario: Scenario, keep_trace: bool = True, sink=None):
        self.scenario = scenario
        self.rng = random.Random(scenario.seed)
        self.device_secret = self.rng.randbytes(32)
        self.machine = Machine(
            scenario.ram_size,
            DeviceTree(list(scenario.device_tree)),
            scenario.prot_entries,
            scenario.unlockable_entries,
        )
        self.trace = Trace(keep=keep_trace, sink=sink)
        self.handles: dict[int, str] = {}
        self.reports: list[tuple[int, AttestationReport]] = []
        self.attest_request: tuple[int, bytes] | None = None
        self.attest_report: AttestationReport | None = None
        self._stop = False
        self._last_trap = 0
        self.monitor = self._boot(0)

    def _boot(self, now: int) -> SecurityMonitor:
        los_memory = PhysRange(RAM_BASE, self.scenario.los.initial_memory)
        return SecurityMonitor(
            self.machine,
            los_memory,
            self.device_secret,
            self.rng,
            self.trace,
            check_interval_ms=self.scenario.config.check_interval_ms,
            lock_threshold=self.scenario.config.lock_threshold,
            boot_time=now,
        )

    # -- script actions ------------------------------------------------------

    def _do_action(self, act: ScriptAction, now: int) -> None:
        if act.action == "create":
            self._do_create(act, now)
        elif act.action == "destroy":
            self._with_handle(act, now, lambda h: self.monitor.destroy_sapp(h, now))
        elif act.action == "attest":
            nonce = act.nonce if act.nonce is not None else self.rng.randbytes(32)
            self._with_handle(act, now, lambda h: self.monitor.attest_sapp(h, nonce, now))
        elif act.action == "reset":
            self.machine.full_reset()
            self.trace.emit(now, ACTOR_SM, "full_reset", session=self.machine.boot_session)
            self.handles.clear()
            self._last_trap = now
            self.monitor = self._boot(now)
        else:  # pragma: no cover - loader rejects unknown actions
            raise AssertionError(act.action)

    def _with_handle(self, act: ScriptAction, now: int, fn) -> None:
        handle = self.handles.get(act.sapp)
        if handle is None:
            self.trace.emit(
                now, ACTOR_SM, "script_error", action=act.action, sapp=act.sapp,
                reason="NoSuchSapp",
            )
            return
        try:
            fn(handle)
        except SimError:
            pass  # already recorded as a .err trace event

    def _do_create(self, act: ScriptAction, now: int) -> None:
        index = act.sapp
        spec = self.scenario.sapps[index]
        live = self.handles.get(index)
        if live is not None and self.monitor.sapps[live].live:
            self.trace.emit(
                now, ACTOR_SM, "script_error", action="create", sapp=index,
                reason="InvalidState",
            )
            return
        try:
            self._ensure_pool(spec.mem_size, now)
            nonce = act.nonce if act.nonce is not None else self.rng.randbytes(32)
            handle, report = self.monitor.create_sapp(
                spec.image, spec.mem_size, spec.policy, spec.peripherals, nonce, now
            )
        except SimError:
            return
        self.handles[index] = handle
        self.reports.append((index, report))
        for name in spec.peripherals:
            try:
                self.monitor.concede_peripheral(name, handle, now)
            except SimError:
                pass
        if self.attest_request is not None and self.attest_request[0] == index:
            self.attest_report = self.monitor.attest_sapp(handle, self.attest_request[1], now)
            self._stop = True

    def _ensure_pool(self, mem_size: int, now: int) -> None:
        """LOS donates from the top of its memory when the pool cannot
        serve the next creation. Every strategy cooperates here; refusing
        memory is not one of the modeled attacks."""
        if any(r.size >= mem_size for r in self.monitor.free_pool):
            return
        tail = max(self.monitor.los_ranges, key=lambda r: r.end, default=None)
        if tail is None or tail.size < mem_size:
            raise InsufficientMemory(f"LOS cannot donate {mem_size} bytes")
        self.monitor.donate_memory(PhysRange(tail.end - mem_size, mem_size), now)

    # -- the quantum loop -----------------------------------------------------

    def run(self) -> SimResult:
        scenario = self.scenario
        q = scenario.config.quantum_ms
        strategy = scenario.los.strategy
        script = list(scenario.script)
        si = 0
        t = 0
        while t < scenario.until_ms and not self._stop:
            while si < len(script) and script[si].t_ms <= t:
                self._do_action(script[si], t)
                si += 1
                if self._stop:
                    break
            if self._stop:
                break
            self._run_quantum(strategy, t, min(q, scenario.until_ms - t))
            t += q
        return SimResult(
            self.trace, self.machine, self.monitor, dict(self.handles),
            self.reports, self.attest_report,
        )

    def _run_quantum(self, strategy: domains.LosStrategy, t: int, q: int) -> None:
        regions = [
            self.monitor.sapps[h].mem.base
            for _, h in sorted(self.handles.items())
            if self.monitor.sapps[h].live
        ]
        for addr in strategy.probe_addresses(regions):
            domains.probe_as_los(self.machine, self.trace, addr, t)

        cursor = t
        skip: set[str] = set()
        while cursor < t + q:
            pick = domains.pick_next_switch(
                strategy, self._candidates(cursor), t + q - cursor, skip
            )
            if pick is None:
                break
            try:
                ret = self.monitor.switch_to_sapp(
                    pick.handle, pick.slice_ms, cursor, self._runner
                )
            except SimError:
                skip.add(pick.handle)
                continue
            if ret.ran_ms == 0:
                skip.add(pick.handle)
            cursor += ret.ran_ms

        end = t + q
        if strategy.trap_due(end, self._last_trap):
            self._last_trap = end
            self.monitor.note_context_switch(end)

    def _candidates(self, now: int) -> list[tuple[int, str, object, int]]:
        out = []
        for index, handle in sorted(self.handles.items()):
            desc = self.monitor.sapps[handle]
            if not desc.live:
                continue
            window = desc.policy.window_of(now)
            out.append((index, handle, desc.policy, self.monitor.ledger.granted(handle, window)))
        return out

    def _runner(self, desc, slice_ms: int, start_ms: int):
        index = next(i for i, h in self.handles.items() if h == desc.handle)
        behavior = self.scenario.sapps[index].behavior
        return domains.run_sapp_slice(
            self.machine, self.trace, desc, behavior, slice_ms, start_ms
        )


def run(
    scenario: Scenario,
    keep_trace: bool = True,
    sink=None,
    attest_request: tuple[int, bytes] | None = None,
) -> SimResult:
    sim = Simulation(scenario, keep_trace=keep_trace, sink=sink)
    sim.attest_request = attest_request
    return sim.run()


# -- property checking ---------------------------------------------------------

@dataclass(frozen=True)
class PropertyResult:
    prop: str
    title: str
    passed: bool
    detail: str = ""
    counterexample: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        status = "PASS" if self.passed else "FAIL"
        out = [f"{self.prop} {self.title}: {status}" + (f" ({self.detail})" if self.detail else "")]
        for line in self.counterexample[:5]:
            out.append(f"  counterexample: {line}")
        return out


@dataclass(frozen=True)
class CheckReport:
    results: tuple[PropertyResult, ...]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def render(self) -> str:
        lines = []
        for r in self.results:
            lines.extend(r.lines())
        return "".join(line + "\n" for line in lines)


def _ensure_sapp(scenario: Scenario) -> Scenario:
    """The suites need at least one sapp to say anything interesting."""
    if scenario.sapps:
        return scenario
    spec = SappSpec(
        image=b"probe sapp",
        mem_size=16 * 4096,
        policy=SchedulingPolicy(10, 100),
        peripherals=(),
        behavior=domains.ComputeOnly(5),
    )
    return replace(scenario, sapps=(spec,), script=(ScriptAction(0, "create", sapp=0),))


def check_user_control(scenario: Scenario) -> PropertyResult:
    """Policies the user configured are satisfiable and enforced, and
    conceded peripherals answer only to their sapp."""
    s = replace(_ensure_sapp(scenario), los=replace(scenario.los, strategy=domains.Cooperative()))
    res = run(s)
    bad: list[str] = []
    if res.trace.count("sanction"):
        bad = [ev.line() for ev in res.trace if ev.event == "sanction"]
        return PropertyResult("P1", "user-control", False, "cooperative run sanctioned", tuple(bad))
    for index, handle in res.handles.items():
        desc = res.monitor.sapps[handle]
        if not desc.live:
            continue
        spec = s.sapps[index]
        for w in range(desc.next_window):
            got = res.monitor.ledger.granted(handle, w)
            if got < desc.policy.min_runtime_ms:
                bad.append(f"handle={handle} window={w} granted={got}")
        for name in spec.peripherals:
            if res.monitor.peripheral_owner.get(name) != desc.domain:
                continue  # conceded elsewhere first; exclusivity is P3 ground
            los_probe = res.machine.mmio_access(
                AccessContext.for_domain(LOS), name, 0, AccessKind.READ
            )
            own_probe = res.machine.mmio_access(
                AccessContext.for_domain(desc.domain), name, 0, AccessKind.READ
            )
            if los_probe.allowed or not own_probe.allowed:
                bad.append(f"peripheral={name} los={los_probe} owner={own_probe}")
    if bad:
        return PropertyResult("P1", "user-control", False, "grant not enforced", tuple(bad))
    return PropertyResult("P1", "user-control", True, "policies met, grants exclusive")


def check_no_inspection(scenario: Scenario) -> PropertyResult:
    """Creation hands memory over for good: the monitor's own self-check
    read must fault, and must keep faulting afterwards."""
    s = _ensure_sapp(scenario)
    res = run(s)
    bad = []
    for ev in res.trace:
        if ev.event == "self_check" and ("denied", "true") not in ev.fields:
            bad.append(ev.line())
    for handle in res.handles.values():
        desc = res.monitor.sapps[handle]
        probe = res.machine.read(SM_CTX, desc.mem.base, 1)
        if probe.allowed:
            bad.append(f"post-run monitor read into {handle} region succeeded")
    checks = res.trace.count("self_check")
    if bad:
        return PropertyResult("P2", "management-without-inspection", False,
                              "monitor retained access", tuple(bad))
    return PropertyResult("P2", "management-without-inspection", True,
                          f"{checks} creation self-checks denied")


def check_isolation(scenario: Scenario) -> PropertyResult:
    """Confidentiality and integrity across domains, and detection of
    availability attacks."""
    s = _ensure_sapp(scenario)
    inspector = replace(s, los=replace(s.los, strategy=domains.Inspector()))
    res = run(inspector)
    bad = []
    live_regions = [
        res.monitor.sapps[h].mem for h in res.handles.values() if res.monitor.sapps[h].live
    ]
    for ev in res.trace:
        if ev.event != "mem_probe":
            continue
        fields = dict(ev.fields)
        if fields.get("fault") == "-" and ev.actor == "LOS":
            if any(r.contains(int(fields["addr"])) for r in live_regions):
                bad.append(ev.line())
        if fields.get("fault") == "-" and ev.actor != "LOS":
            bad.append(ev.line())  # a sapp probe that escaped its region
    if bad:
        return PropertyResult("P3", "isolation", False, "cross-domain read succeeded", tuple(bad))

    starved = replace(
        s,
        los=replace(s.los, strategy=domains.Starver(tuple(range(len(s.sapps))))),
        until_ms=max(s.until_ms, 4 * s.config.check_interval_ms),
    )
    res2 = run(starved)
    if not any(s_.policy.min_runtime_ms > 0 for s_ in s.sapps):
        detection = "no positive minima to starve"
    elif res2.trace.count("sanction") == 0:
        return PropertyResult("P3", "isolation", False, "starvation went undetected")
    else:
        detection = f"starvation drew {res2.trace.count('sanction')} sanctions"
    probes = res.trace.count("mem_probe")
    return PropertyResult("P3", "isolation", True, f"{probes} probes faulted; {detection}")


def check_anonymity(scenario: Scenario) -> PropertyResult:
    """Substituting sapp code with size/policy/peripherals/behavior held
    fixed must not change anything the LOS observes."""
    s = _ensure_sapp(scenario)
    flipped = replace(
        s,
        sapps=tuple(
            replace(spec, image=bytes(b ^ 0xFF for b in spec.image)) for spec in s.sapps
        ),
    )
    res_a, res_b = run(s), run(flipped)
    lines_a = canonicalize_handles([ev.line() for ev in los_visible(res_a.trace)])
    lines_b = canonicalize_handles([ev.line() for ev in los_visible(res_b.trace)])
    views_a = canonicalize_handles(res_a.monitor.los_observable_view().lines())
    views_b = canonicalize_handles(res_b.monitor.los_observable_view().lines())
    if lines_a != lines_b:
        diff = [f"- {a}" for a in lines_a if a not in lines_b][:3]
        diff += [f"+ {b}" for b in lines_b if b not in lines_a][:3]
        if not diff:
            diff = ["trace lengths differ"]
        return PropertyResult("P4", "anonymity", False, "LOS-visible trace diverged", tuple(diff))
    if views_a != views_b:
        return PropertyResult("P4", "anonymity", False, "LOS view diverged",
                              tuple(views_a + views_b))
    return PropertyResult("P4", "anonymity", True,
                          f"{len(lines_a)} LOS-visible lines invariant under image swap")


def monitor_loc() -> tuple[int, int]:
    """(code lines, total lines) of the monitor module's source."""
    from . import monitor as monitor_module

    path = monitor_module.__file__
    code = total = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            total += 1
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                code += 1
    return code, total


def check_tcb(_: Scenario) -> PropertyResult:
    code, total = monitor_loc()
    return PropertyResult("P5", "tcb-size", True, f"monitor is {code} LoC ({total} lines)")


def check(scenario: Scenario) -> CheckReport:
    suites = (
        check_user_control,
        check_no_inspection,
        check_isolation,
        check_anonymity,
        check_tcb,
    )
    return CheckReport(tuple(suite(scenario) for suite in suites))
