"""Autonomy auditing for hybrid human/AI decision systems."""

__version__ = "0.1.0"

from .core_metrics import (
    AlphaEstimate,
    CostModel,
    Decider,
    DecisionEvent,
    LaborRole,
    Phase,
    Regime,
    RegimeClassification,
    classify_regime,
    compute_alpha,
    compute_alpha_windowed,
    human_cost_share,
    total_cost,
)
from .errors import AuditError
from .event_ingest import EventStore, append_events, parse_event_line, read_events, serialize_event
from .gate_engine import (
    GateConfig,
    GatePhase,
    GateState,
    GateVerdict,
    Outcome,
    PairedDecision,
    PhaseResult,
    ScoredPrediction,
    gate_advance,
    offline_evaluate,
    replay,
    shadow_evaluate,
    steady_state_check,
)
from .reports import LaborAllocation, ReportDocument, labor_report
from .workload_sim import WorkloadSpec, builtin_scenario, simulate_offline, simulate_operational, simulate_shadow

__all__ = [
    "AlphaEstimate",
    "AuditError",
    "CostModel",
    "Decider",
    "DecisionEvent",
    "EventStore",
    "GateConfig",
    "GatePhase",
    "GateState",
    "GateVerdict",
    "LaborAllocation",
    "LaborRole",
    "Outcome",
    "PairedDecision",
    "Phase",
    "PhaseResult",
    "Regime",
    "RegimeClassification",
    "ReportDocument",
    "ScoredPrediction",
    "WorkloadSpec",
    "append_events",
    "builtin_scenario",
    "classify_regime",
    "compute_alpha",
    "compute_alpha_windowed",
    "gate_advance",
    "human_cost_share",
    "labor_report",
    "offline_evaluate",
    "parse_event_line",
    "read_events",
    "replay",
    "serialize_event",
    "shadow_evaluate",
    "simulate_offline",
    "simulate_operational",
    "simulate_shadow",
    "steady_state_check",
    "total_cost",
]
