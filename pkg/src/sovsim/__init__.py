"""sovsim: a deterministic simulator of a sovereign-smartphone security
monitor, with lockable memory protection, exclusive peripheral concession,
scheduling-policy verification, and attestation."""

from .attestation import AttestationReport, Measurement, build_report, measure, verify_report
from .errors import (
    AlreadyConceded,
    BadRange,
    BadState,
    DeviceLocked,
    EntryLocked,
    InfeasiblePolicies,
    InsufficientMemory,
    InvalidState,
    NoSuchSapp,
    NotOwner,
    OffsetOutOfRange,
    OutOfProtEntries,
    ParseError,
    RangeInUse,
    ScenarioError,
    SchemaViolation,
    SimError,
    UnknownPeripheral,
)
from .harness import CheckReport, SimResult, Simulation, check, monitor_loc, run
from .hw import (
    LOS,
    SM,
    AccessContext,
    AccessKind,
    AccessResult,
    DeviceTree,
    DomainId,
    FaultReason,
    Machine,
    Peripheral,
    Perms,
    PhysRange,
    ProtEntry,
    sapp_domain,
)
from .monitor import (
    ControlReturn,
    LosView,
    Sanction,
    SanctionCause,
    SanctionKind,
    SappDescriptor,
    SappState,
    SecurityMonitor,
    SliceEnd,
)
from .policy import (
    CheckDueness,
    PolicyVerdict,
    RuntimeLedger,
    SchedulingPolicy,
    check_due,
    evaluate,
)
from .scenario import Scenario, load_scenario, scenario_from_dict
from .trace import Trace, TraceEvent, canonicalize_handles, los_visible

__version__ = "0.1.0"
