"""Line-oriented simulation traces.

One event per line: ``t=<int> actor=<str> event=<str> k=v ...`` with keys
in the order the emitter supplied them, so identical runs produce
byte-identical traces. The legacy OS's observable slice of a trace is
exactly the events whose actor is LOS.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable

ACTOR_SM = "SM"
ACTOR_LOS = "LOS"

_HANDLE_RE = re.compile(r"\b[0-9a-f]{16}\b")


def _render(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (bytes, bytearray)):
        return value.hex()
    return str(value)


@dataclass(frozen=True)
class TraceEvent:
    t: int
    actor: str
    event: str
    fields: tuple[tuple[str, str], ...] = ()

    def line(self) -> str:
        parts = [f"t={self.t}", f"actor={self.actor}", f"event={self.event}"]
        parts.extend(f"{k}={v}" for k, v in self.fields)
        return " ".join(parts)


class Trace:
    """Ordered event sink with a monotonic clock.

    With ``keep=False`` only per-event counters are maintained, for long
    runs whose full event list would be wasteful to hold.
    """

    def __init__(self, keep: bool = True, sink: Callable[[TraceEvent], None] | None = None):
        self.events: list[TraceEvent] = []
        self.counts: dict[str, int] = {}
        self._keep = keep
        self._sink = sink
        self._last_t = 0

    def emit(self, t: int, actor: str, event: str, **fields: object) -> TraceEvent:
        if t < self._last_t:
            raise ValueError(f"trace time went backwards: {t} < {self._last_t}")
        self._last_t = t
        ev = TraceEvent(t, actor, event, tuple((k, _render(v)) for k, v in fields.items()))
        if self._keep:
            self.events.append(ev)
        self.counts[event] = self.counts.get(event, 0) + 1
        if self._sink is not None:
            self._sink(ev)
        return ev

    def count(self, event: str) -> int:
        return self.counts.get(event, 0)

    def lines(self) -> list[str]:
        return [ev.line() for ev in self.events]

    def render(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


def los_visible(events: Iterable[TraceEvent]) -> list[TraceEvent]:
    """Project a trace onto what the legacy OS can observe: its own calls
    and the results returned to it."""
    return [ev for ev in events if ev.actor == ACTOR_LOS]


def canonicalize_handles(lines: Iterable[str]) -> list[str]:
    """Rewrite per-boot random handles (16 hex chars) to h1, h2, ... in
    order of first appearance, for comparing traces across runs."""
    mapping: dict[str, str] = {}

    def repl(m: re.Match) -> str:
        token = m.group(0)
        if token not in mapping:
            mapping[token] = f"h{len(mapping) + 1}"
        return mapping[token]

    return [_HANDLE_RE.sub(repl, line) for line in lines]
