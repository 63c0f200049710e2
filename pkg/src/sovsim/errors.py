"""Exception hierarchy shared by the machine model and the security monitor.

Every error that can surface during a simulated run carries a short
``code`` used verbatim in trace lines, so traces stay diffable.
"""


class SimError(Exception):
    """Base class for all modeled errors."""

    code = "SimError"

    def __str__(self) -> str:
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


# Machine-level errors

class BadRange(SimError):
    code = "BadRange"


class BadState(SimError):
    code = "BadState"


class EntryLocked(SimError):
    code = "EntryLocked"


class UnknownPeripheral(SimError):
    code = "UnknownPeripheral"


class OffsetOutOfRange(SimError):
    code = "OffsetOutOfRange"


# Monitor-level errors

class RangeInUse(SimError):
    code = "RangeInUse"


class InsufficientMemory(SimError):
    code = "InsufficientMemory"


class OutOfProtEntries(SimError):
    code = "OutOfProtEntries"


class DeviceLocked(SimError):
    code = "DeviceLocked"


class InvalidState(SimError):
    code = "InvalidState"


class NoSuchSapp(SimError):
    code = "NoSuchSapp"


class AlreadyConceded(SimError):
    code = "AlreadyConceded"


class NotOwner(SimError):
    code = "NotOwner"


# Scenario-file errors (CLI exit code 2)

class ScenarioError(SimError):
    code = "ScenarioError"


class ParseError(ScenarioError):
    code = "ParseError"


class SchemaViolation(ScenarioError):
    code = "SchemaViolation"


class InfeasiblePolicies(ScenarioError):
    code = "InfeasiblePolicies"
