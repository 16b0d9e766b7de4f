"""Deployment gate: offline evaluation, shadow evaluation, steady-state monitoring.

The gate is a small phase machine. ``GateState`` is an immutable value and
``gate_advance`` is a pure transition, so any persisted history can be
replayed to reconstruct the state it produced.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from .core_metrics import (
    DEFAULT_HISOAI_THRESHOLD,
    DEFAULT_IDEAL_FLOOR,
    AlphaEstimate,
    _is_fraction,
    estimate_from_counts,
)
from .errors import (
    ConfigError,
    CorruptSegment,
    EmptyLog,
    IllegalTransition,
    InvalidEvent,
    InvalidField,
    MissingField,
    StoreIoError,
)
from .event_ingest import canonical_json, parse_json_line

logger = logging.getLogger(__name__)

OFFLINE_FLAG_REASON = (
    "HISOAI flag: offline autonomy {alpha:.4f} < target {target:.4f}. "
    "System is not an AI-First product; must be marketed as a human-powered service."
)
SHADOW_FLAG_REASON = (
    "HISOAI flag: shadow autonomy {alpha:.4f} < target {target:.4f}. "
    "The system is unstable in a live setting."
)
MONITOR_FLAG_REASON = (
    "HISOAI flag: operational autonomy below target {target:.4f} for {k} consecutive windows. "
    "Trigger AI re-engineering/retraining."
)


class GatePhase(str, Enum):
    OFFLINE_EVAL = "offline_eval"
    SHADOW_EVAL = "shadow_eval"
    DEPLOYED = "deployed"
    REENGINEERING = "reengineering"


class Outcome(str, Enum):
    PASS = "pass"
    HISOAI_FLAG = "hisoai_flag"
    HEALTHY = "healthy"
    TRIGGER = "trigger"
    RESUME = "resume"


# (phase, outcome) -> next phase
_TRANSITIONS: dict[tuple[GatePhase, Outcome], GatePhase] = {
    (GatePhase.OFFLINE_EVAL, Outcome.PASS): GatePhase.SHADOW_EVAL,
    (GatePhase.OFFLINE_EVAL, Outcome.HISOAI_FLAG): GatePhase.REENGINEERING,
    (GatePhase.SHADOW_EVAL, Outcome.PASS): GatePhase.DEPLOYED,
    (GatePhase.SHADOW_EVAL, Outcome.HISOAI_FLAG): GatePhase.REENGINEERING,
    (GatePhase.DEPLOYED, Outcome.HEALTHY): GatePhase.DEPLOYED,
    (GatePhase.DEPLOYED, Outcome.TRIGGER): GatePhase.REENGINEERING,
    (GatePhase.REENGINEERING, Outcome.RESUME): GatePhase.OFFLINE_EVAL,
}


@dataclass(frozen=True)
class GateConfig:
    """Gate thresholds.

    ``theta`` has no default on purpose: offline evaluation refuses to run
    until it is set explicitly. ``monitor_by`` selects count- or time-based
    monitoring windows (``monitor_window``/``monitor_stride`` in events or ms).
    """

    alpha_target: float
    theta: float | None = None
    shadow_cycles: int = 1
    hisoai_threshold: float = DEFAULT_HISOAI_THRESHOLD
    ideal_floor: float = DEFAULT_IDEAL_FLOOR
    monitor_window: int = 1000
    monitor_stride: int | None = None
    monitor_by: str = "count"
    consecutive_breaches: int = 3

    def __post_init__(self) -> None:
        for name in ("alpha_target", "hisoai_threshold", "ideal_floor"):
            if not _is_fraction(getattr(self, name)):
                raise ConfigError(f"{name} must lie in [0, 1]", key=name)
        if self.theta is not None and not _is_fraction(self.theta):
            raise ConfigError("theta must lie in [0, 1]", key="theta")
        for name in ("shadow_cycles", "monitor_window", "consecutive_breaches"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer", key=name)
        if self.monitor_stride is not None and (
            isinstance(self.monitor_stride, bool) or not isinstance(self.monitor_stride, int) or self.monitor_stride < 1
        ):
            raise ConfigError("monitor_stride must be a positive integer", key="monitor_stride")
        if self.monitor_by not in ("count", "time"):
            raise ConfigError("monitor_by must be 'count' or 'time'", key="monitor_by")

    @property
    def stride(self) -> int:
        return self.monitor_stride if self.monitor_stride is not None else self.monitor_window

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha_target": self.alpha_target,
            "theta": self.theta,
            "shadow_cycles": self.shadow_cycles,
            "hisoai_threshold": self.hisoai_threshold,
            "ideal_floor": self.ideal_floor,
            "monitor_window": self.monitor_window,
            "monitor_stride": self.stride,
            "monitor_by": self.monitor_by,
            "consecutive_breaches": self.consecutive_breaches,
        }


@dataclass(frozen=True)
class ScoredPrediction:
    task_id: str
    ai_confidence: float
    ai_decision: str

    def __post_init__(self) -> None:
        if not _is_fraction(self.ai_confidence):
            raise InvalidEvent("ai_confidence must lie in [0, 1]", key="ai_confidence")


def normalized_equal(a: str, b: str) -> bool:
    """Exact match after collapsing runs of whitespace and trimming."""
    return " ".join(a.split()) == " ".join(b.split())


@dataclass(frozen=True)
class PairedDecision:
    task_id: str
    ai_decision: str
    human_decision: str
    agree: bool

    @classmethod
    def compare(
        cls,
        task_id: str,
        ai_decision: str,
        human_decision: str,
        equal: Callable[[str, str], bool] = normalized_equal,
    ) -> PairedDecision:
        return cls(task_id, ai_decision, human_decision, bool(equal(ai_decision, human_decision)))


@dataclass(frozen=True)
class GateVerdict:
    phase: GatePhase
    outcome: Outcome
    measured_alpha: AlphaEstimate
    reason: str

    @property
    def flagged(self) -> bool:
        return self.outcome is Outcome.HISOAI_FLAG

    def to_dict(self) -> dict[str, Any]:
        return {
            "phase": self.phase.value,
            "outcome": self.outcome.value,
            "measured_alpha": self.measured_alpha.to_dict(),
            "reason": self.reason,
        }


@dataclass(frozen=True)
class ReengineeringTrigger:
    """A run of consecutive windows below target."""

    first_index: int
    last_index: int
    window_starts: tuple[int, ...]
    alphas: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "first_index": self.first_index,
            "last_index": self.last_index,
            "window_starts": list(self.window_starts),
            "alphas": list(self.alphas),
        }


def _verdict(phase: GatePhase, est: AlphaEstimate, target: float, flag_reason: str) -> GateVerdict:
    # ties at the target pass: only alpha < target flags
    if est.alpha < target:
        return GateVerdict(phase, Outcome.HISOAI_FLAG, est, flag_reason.format(alpha=est.alpha, target=target))
    return GateVerdict(
        phase, Outcome.PASS, est, f"pass: autonomy {est.alpha:.4f} >= target {target:.4f}"
    )


def offline_evaluate(
    predictions: Sequence[ScoredPrediction], config: GateConfig
) -> tuple[AlphaEstimate, GateVerdict]:
    """Share of test-set decisions with confidence strictly above theta."""
    if config.theta is None:
        raise ConfigError("theta must be configured explicitly for offline evaluation", key="theta")
    if not predictions:
        raise EmptyLog("no predictions to evaluate")
    theta = config.theta
    confident = sum(1 for p in predictions if p.ai_confidence > theta)
    est = estimate_from_counts(confident, len(predictions))
    return est, _verdict(GatePhase.OFFLINE_EVAL, est, config.alpha_target, OFFLINE_FLAG_REASON)


def shadow_evaluate(
    pairs: Sequence[PairedDecision], config: GateConfig
) -> tuple[AlphaEstimate, GateVerdict]:
    """Autonomy as one minus the blind-disagreement rate."""
    if not pairs:
        raise EmptyLog("no shadow pairs to evaluate")
    if len(pairs) != config.shadow_cycles:
        logger.warning("shadow evaluation got %d pairs, configured for %d cycles", len(pairs), config.shadow_cycles)
    human_required = sum(1 for p in pairs if not p.agree)
    est = estimate_from_counts(len(pairs) - human_required, len(pairs))
    return est, _verdict(GatePhase.SHADOW_EVAL, est, config.alpha_target, SHADOW_FLAG_REASON)


def steady_state_check(
    windowed: Sequence[tuple[int, AlphaEstimate]], config: GateConfig
) -> ReengineeringTrigger | None:
    """Fire when ``consecutive_breaches`` adjacent windows sit below target.

    If several runs qualify, the latest one is reported, extended to its
    full length.
    """
    need = config.consecutive_breaches
    target = config.alpha_target
    found: tuple[int, int] | None = None
    run_start: int | None = None
    for i, (_, est) in enumerate(windowed):
        if est.alpha < target:
            if run_start is None:
                run_start = i
            if i - run_start + 1 >= need:
                found = (run_start, i)
        else:
            run_start = None
    if found is None:
        return None
    lo, hi = found
    return ReengineeringTrigger(
        lo,
        hi,
        tuple(windowed[i][0] for i in range(lo, hi + 1)),
        tuple(windowed[i][1].alpha for i in range(lo, hi + 1)),
    )


@dataclass(frozen=True)
class PhaseResult:
    """One gate transition input; also the persisted history record."""

    phase: GatePhase
    outcome: Outcome
    timestamp: int
    measured_alpha: AlphaEstimate | None = None
    reason: str = ""

    @classmethod
    def from_verdict(cls, verdict: GateVerdict, timestamp: int) -> PhaseResult:
        return cls(verdict.phase, verdict.outcome, timestamp, verdict.measured_alpha, verdict.reason)

    @classmethod
    def from_monitor(
        cls,
        trigger: ReengineeringTrigger | None,
        timestamp: int,
        config: GateConfig,
        latest: AlphaEstimate | None = None,
    ) -> PhaseResult:
        if trigger is None:
            return cls(GatePhase.DEPLOYED, Outcome.HEALTHY, timestamp, latest, "healthy")
        reason = MONITOR_FLAG_REASON.format(target=config.alpha_target, k=len(trigger.alphas))
        return cls(GatePhase.DEPLOYED, Outcome.TRIGGER, timestamp, latest, reason)

    @classmethod
    def resume(cls, timestamp: int, reason: str = "re-engineering complete") -> PhaseResult:
        return cls(GatePhase.REENGINEERING, Outcome.RESUME, timestamp, None, reason)

    def to_dict(self) -> dict[str, Any]:
        return {
            "phase": self.phase.value,
            "outcome": self.outcome.value,
            "timestamp": self.timestamp,
            "measured_alpha": None if self.measured_alpha is None else self.measured_alpha.to_dict(),
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PhaseResult:
        est = d.get("measured_alpha")
        return cls(
            GatePhase(d["phase"]),
            Outcome(d["outcome"]),
            int(d["timestamp"]),
            None if est is None else AlphaEstimate.from_dict(est),
            str(d.get("reason", "")),
        )


@dataclass(frozen=True)
class GateState:
    phase: GatePhase = GatePhase.OFFLINE_EVAL
    history: tuple[PhaseResult, ...] = field(default_factory=tuple)
    reengineering_cycles: int = 0

    @classmethod
    def initial(cls) -> GateState:
        return cls()

    def to_dict(self) -> dict[str, Any]:
        return {
            "phase": self.phase.value,
            "reengineering_cycles": self.reengineering_cycles,
            "history_length": len(self.history),
            "last": None if not self.history else self.history[-1].to_dict(),
        }


def gate_advance(state: GateState, result: PhaseResult) -> GateState:
    if result.phase is not state.phase:
        raise IllegalTransition(
            f"result for {result.phase.value} cannot apply in phase {state.phase.value}",
            phase=state.phase.value,
        )
    nxt = _TRANSITIONS.get((state.phase, result.outcome))
    if nxt is None:
        raise IllegalTransition(
            f"outcome {result.outcome.value} is not valid in phase {state.phase.value}",
            phase=state.phase.value,
        )
    if state.history and result.timestamp <= state.history[-1].timestamp:
        raise IllegalTransition(
            f"timestamp {result.timestamp} does not follow {state.history[-1].timestamp}",
            phase=state.phase.value,
        )
    cycles = state.reengineering_cycles + (1 if result.outcome is Outcome.HISOAI_FLAG else 0)
    return replace(state, phase=nxt, history=state.history + (result,), reengineering_cycles=cycles)


def replay(history: Iterable[PhaseResult]) -> GateState:
    state = GateState.initial()
    for result in history:
        state = gate_advance(state, result)
    return state


class GateHistoryLog:
    """Append-only line-delimited history file, one record per transition."""

    def __init__(self, path: str | os.PathLike[str]) -> None:
        self.path = Path(path)

    def load(self) -> list[PhaseResult]:
        if not self.path.exists():
            return []
        out = []
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    out.append(PhaseResult.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptSegment(f"bad gate history record: {exc}", segment=str(self.path), line=lineno)
        return out

    def state(self) -> GateState:
        return replay(self.load())

    def append(self, result: PhaseResult) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                fh.write(canonical_json(result.to_dict()) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreIoError(f"cannot append gate history: {exc}", path=str(self.path)) from exc

    def advance(self, result: PhaseResult) -> GateState:
        """Validate against the replayed state, then persist."""
        state = gate_advance(self.state(), result)
        self.append(result)
        return state


def prediction_to_dict(p: ScoredPrediction) -> dict[str, Any]:
    return {"task_id": p.task_id, "ai_confidence": p.ai_confidence, "ai_decision": p.ai_decision}


def pair_to_dict(p: PairedDecision) -> dict[str, Any]:
    return {"task_id": p.task_id, "ai_decision": p.ai_decision, "human_decision": p.human_decision, "agree": p.agree}


def _require(obj: Mapping[str, Any], keys: Sequence[str], line: int) -> None:
    for key in keys:
        if key not in obj:
            raise MissingField(key, line=line)
    for key in keys:
        if key != "ai_confidence" and not isinstance(obj[key], str):
            raise InvalidField(key, "must be a string", line=line)


def parse_prediction_lines(lines: Iterable[str]) -> Iterator[ScoredPrediction]:
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        obj = parse_json_line(line, n)
        _require(obj, ("task_id", "ai_confidence", "ai_decision"), n)
        conf = obj["ai_confidence"]
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise InvalidField("ai_confidence", "must be a number in [0, 1]", line=n)
        yield ScoredPrediction(obj["task_id"], float(conf), obj["ai_decision"])


def parse_pair_lines(
    lines: Iterable[str], equal: Callable[[str, str], bool] = normalized_equal
) -> Iterator[PairedDecision]:
    """Agreement is always recomputed with ``equal``; a stored ``agree`` key is ignored."""
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        obj = parse_json_line(line, n)
        _require(obj, ("task_id", "ai_decision", "human_decision"), n)
        yield PairedDecision.compare(obj["task_id"], obj["ai_decision"], obj["human_decision"], equal)
