"""Scheduling policies and the runtime ledger they are judged against.

A policy demands a minimum runtime per fixed window. The ledger records,
per sapp and window, how much runtime the legacy OS actually granted;
evaluation compares the two for every fully elapsed window.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


@dataclass(frozen=True)
class SchedulingPolicy:
    min_runtime_ms: int
    window_ms: int
    active: bool = True

    def __post_init__(self) -> None:
        if self.window_ms <= 0:
            raise ValueError("window must be positive")
        if not 0 <= self.min_runtime_ms <= self.window_ms:
            raise ValueError("min_runtime must lie in [0, window]")

    def window_of(self, t_ms: int) -> int:
        return t_ms // self.window_ms


@dataclass(frozen=True)
class PolicyVerdict:
    window_index: int
    granted_ms: int
    deficit_ms: int  # 0 when compliant

    @property
    def compliant(self) -> bool:
        return self.deficit_ms == 0


class CheckDueness(enum.Enum):
    NOT_DUE = "NotDue"
    DUE = "Due"
    OVERDUE = "Overdue"


@dataclass
class RuntimeLedger:
    """Granted runtime per (sapp key, window index). Written only by the
    monitor at context switches; values never decrease."""

    _granted: dict[tuple[str, int], int] = field(default_factory=dict)

    def credit(self, key: str, policy: SchedulingPolicy, start_ms: int, ran_ms: int) -> None:
        """Attribute ``ran_ms`` entirely to the window containing ``start_ms``.

        A slice straddling a window boundary credits its full duration to
        the window it started in. Zero-length slices leave the ledger
        untouched.
        """
        if ran_ms < 0:
            raise ValueError("ran must be non-negative")
        if ran_ms == 0:
            return
        window = policy.window_of(start_ms)
        self._granted[(key, window)] = self._granted.get((key, window), 0) + ran_ms

    def granted(self, key: str, window_index: int) -> int:
        return self._granted.get((key, window_index), 0)

    def total(self, key: str) -> int:
        return sum(v for (k, _), v in self._granted.items() if k == key)

    def windows(self, key: str) -> dict[int, int]:
        return {w: v for (k, w), v in self._granted.items() if k == key}


def evaluate(
    ledger: RuntimeLedger,
    key: str,
    policy: SchedulingPolicy,
    from_window: int,
    up_to_window: int,
) -> list[PolicyVerdict]:
    """Judge every window in [from_window, up_to_window]. Pure.

    Callers pass only fully elapsed windows; each window is judged once,
    with the caller advancing ``from_window`` past what was returned.
    """
    if not policy.active:
        return []
    verdicts = []
    for w in range(from_window, up_to_window + 1):
        got = ledger.granted(key, w)
        deficit = max(policy.min_runtime_ms - got, 0)
        verdicts.append(PolicyVerdict(w, got, deficit))
    return verdicts


def check_due(last_check_ms: int, now_ms: int, interval_ms: int) -> CheckDueness:
    """Is a periodic check due, and has its cadence already slipped?"""
    if now_ms < last_check_ms:
        raise ValueError("time went backwards")
    elapsed = now_ms - last_check_ms
    if elapsed < interval_ms:
        return CheckDueness.NOT_DUE
    if elapsed <= 2 * interval_ms:
        return CheckDueness.DUE
    return CheckDueness.OVERDUE
