"""Autonomy coefficient, cost model and regime classification.

Everything here is a pure function over immutable values. Counts are exact
integers; alpha and costs are floats.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from statistics import NormalDist
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    DegenerateCost,
    DomainError,
    EmptyLog,
    InvalidEvent,
    InvalidThresholds,
    InvalidWindow,
    UnsortedEvents,
)

DEFAULT_HISOAI_THRESHOLD = 0.5
DEFAULT_IDEAL_FLOOR = 0.8

# two-sided 95%
Z_95 = NormalDist().inv_cdf(0.975)


class Decider(str, Enum):
    AI_ALONE = "ai_alone"
    AI_WITH_SYNC_HUMAN = "ai_with_sync_human"
    HUMAN_ONLY = "human_only"


class Phase(str, Enum):
    OFFLINE = "offline"
    SHADOW = "shadow"
    OPERATIONAL = "operational"


class LaborRole(str, Enum):
    SUBSTITUTION = "substitution"
    ETHICAL_OVERSIGHT = "ethical_oversight"
    BOUNDARY_PUSH = "boundary_push"
    STRATEGIC_TUNING = "strategic_tuning"


class Regime(str, Enum):
    HISOAI = "hisoai"
    TRANSITIONAL = "transitional"
    IDEAL_HITL = "ideal_hitl"


def _is_fraction(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and 0.0 <= x <= 1.0


@dataclass(frozen=True, slots=True)
class DecisionEvent:
    """One adjudicated task and the path that produced its accepted decision.

    ``reviewed_async`` marks an AI-alone decision that was later checked by a
    human outside the decision path; it stays in the autonomy numerator.
    ``extra`` holds unknown wire keys so they survive a round-trip.
    """

    task_id: str
    timestamp: int
    decider: Decider
    phase: Phase
    ai_confidence: float | None = None
    ai_decision: str | None = None
    human_decision: str | None = None
    reviewed_async: bool = False
    human_role: LaborRole | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.task_id, str):
            raise InvalidEvent("task_id must be a string", key="task_id")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise InvalidEvent("timestamp must be a non-negative integer (ms)", key="timestamp")
        if self.ai_confidence is not None and not _is_fraction(self.ai_confidence):
            raise InvalidEvent("ai_confidence must lie in [0, 1]", key="ai_confidence")
        if self.decider is Decider.AI_ALONE:
            if self.ai_decision is None:
                raise InvalidEvent("ai_alone event requires ai_decision", key="ai_decision")
        elif self.human_decision is None:
            raise InvalidEvent(f"{self.decider.value} event requires human_decision", key="human_decision")

    @property
    def human_involved(self) -> bool:
        return self.decider is not Decider.AI_ALONE


_EMPTY_EXTRA: Mapping[str, Any] = MappingProxyType({})
(
    _set_task_id,
    _set_timestamp,
    _set_decider,
    _set_phase,
    _set_ai_confidence,
    _set_ai_decision,
    _set_human_decision,
    _set_reviewed_async,
    _set_human_role,
    _set_extra,
) = (getattr(DecisionEvent, name).__set__ for name in DecisionEvent.__slots__)
_new_event = object.__new__


def _unchecked_event(
    task_id: str,
    timestamp: int,
    decider: Decider,
    phase: Phase,
    ai_confidence: float | None,
    ai_decision: str | None,
    human_decision: str | None,
    reviewed_async: bool,
    human_role: LaborRole | None,
) -> DecisionEvent:
    """Build an event without running the invariant checks.

    Only for generators whose output is valid by construction; bulk
    simulation spends most of its time in ``__init__`` otherwise.
    """
    ev = _new_event(DecisionEvent)
    _set_task_id(ev, task_id)
    _set_timestamp(ev, timestamp)
    _set_decider(ev, decider)
    _set_phase(ev, phase)
    _set_ai_confidence(ev, ai_confidence)
    _set_ai_decision(ev, ai_decision)
    _set_human_decision(ev, human_decision)
    _set_reviewed_async(ev, reviewed_async)
    _set_human_role(ev, human_role)
    _set_extra(ev, _EMPTY_EXTRA)
    return ev


@dataclass(frozen=True)
class AlphaEstimate:
    alpha: float
    ai_alone_count: int
    total_count: int
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "ai_alone_count": self.ai_alone_count,
            "total_count": self.total_count,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AlphaEstimate:
        return cls(
            alpha=float(d["alpha"]),
            ai_alone_count=int(d["ai_alone_count"]),
            total_count=int(d["total_count"]),
            ci_low=float(d["ci_low"]),
            ci_high=float(d["ci_high"]),
        )


@dataclass(frozen=True)
class CostModel:
    tau_a: float
    tau_h: float
    gamma: float = 0.0
    tau_review_a: float = 0.0

    def __post_init__(self) -> None:
        for name in ("tau_a", "tau_h", "tau_review_a"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v >= 0 or math.isinf(v):
                raise DomainError(f"{name} must be a finite non-negative number", key=name)
        if not _is_fraction(self.gamma):
            raise DomainError("gamma must lie in [0, 1]", key="gamma")

    def ai_path_cost(self) -> float:
        return self.tau_a + self.gamma * self.tau_review_a

    def human_path_cost(self) -> float:
        return self.tau_a + self.tau_h

    def to_dict(self) -> dict[str, float]:
        return {
            "tau_a": self.tau_a,
            "tau_h": self.tau_h,
            "gamma": self.gamma,
            "tau_review_a": self.tau_review_a,
        }


@dataclass(frozen=True)
class RegimeClassification:
    regime: Regime
    alpha: float
    hisoai_threshold: float = DEFAULT_HISOAI_THRESHOLD
    ideal_floor: float = DEFAULT_IDEAL_FLOOR

    def to_dict(self) -> dict[str, Any]:
        return {
            "regime": self.regime.value,
            "alpha": self.alpha,
            "hisoai_threshold": self.hisoai_threshold,
            "ideal_floor": self.ideal_floor,
        }


def wilson_interval(successes: int, n: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise EmptyLog("proportion undefined for n = 0")
    if not 0 <= successes <= n:
        raise DomainError("successes must lie in [0, n]")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = p + z2 / (2 * n)
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    low = (centre - half) / denom
    high = (centre + half) / denom
    # pin the degenerate ends; float rounding can otherwise leave the
    # point estimate a hair outside its own interval
    if successes == 0:
        low = 0.0
    if successes == n:
        high = 1.0
    return max(0.0, min(low, p)), min(1.0, max(high, p))


def estimate_from_counts(ai_alone: int, total: int) -> AlphaEstimate:
    if total <= 0:
        raise EmptyLog("alpha is undefined for an empty log")
    low, high = wilson_interval(ai_alone, total)
    return AlphaEstimate(ai_alone / total, ai_alone, total, low, high)


def compute_alpha(events: Iterable[DecisionEvent]) -> AlphaEstimate:
    """Fraction of decisions taken by the AI alone, with a 95% Wilson CI.

    Asynchronously reviewed AI decisions count as AI-alone; any synchronous
    human participation does not.
    """
    ai_alone = 0
    total = 0
    for ev in events:
        total += 1
        if ev.decider is Decider.AI_ALONE:
            ai_alone += 1
    return estimate_from_counts(ai_alone, total)


def compute_alpha_windowed(
    events: Sequence[DecisionEvent],
    window: int,
    stride: int,
    by: str = "count",
) -> list[tuple[int, AlphaEstimate]]:
    """Alpha over sliding windows.

    ``by="count"`` windows hold ``window`` consecutive events and start every
    ``stride`` events; ``window_start`` is the event index. ``by="time"``
    windows are half-open ``[start, start + window)`` in milliseconds, starting
    at the first timestamp and advancing by ``stride``; ``window_start`` is the
    window's start time. Empty windows are omitted. Generation stops with the
    first window that reaches past the last event, so one window at least as
    long as the stream yields exactly the batch estimate.
    """
    if by not in ("count", "time"):
        raise InvalidWindow(f"unknown window mode {by!r}; use 'count' or 'time'")
    for name, v in (("window", window), ("stride", stride)):
        if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
            raise InvalidWindow(f"{name} must be a positive integer, got {v!r}")
    ts = [ev.timestamp for ev in events]
    for i in range(1, len(ts)):
        if ts[i] < ts[i - 1]:
            raise UnsortedEvents(f"event {i} has timestamp {ts[i]} < {ts[i - 1]}", index=i)
    if not ts:
        return []

    flags = [1 if ev.decider is Decider.AI_ALONE else 0 for ev in events]
    # prefix sums make each window O(1) after the bisects
    prefix = [0]
    for f in flags:
        prefix.append(prefix[-1] + f)

    out: list[tuple[int, AlphaEstimate]] = []
    n = len(ts)
    if by == "count":
        start = 0
        while start < n:
            stop = min(start + window, n)
            out.append((start, estimate_from_counts(prefix[stop] - prefix[start], stop - start)))
            if start + window >= n:
                break
            start += stride
        return out

    last = ts[-1]
    start = ts[0]
    while start <= last:
        lo = bisect_left(ts, start)
        hi = bisect_left(ts, start + window)
        if hi > lo:
            out.append((start, estimate_from_counts(prefix[hi] - prefix[lo], hi - lo)))
        if start + window > last:
            break
        start += stride
    return out


def _check_alpha(alpha: float) -> None:
    if not isinstance(alpha, (int, float)) or isinstance(alpha, bool) or not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}", key="alpha")


def per_task_cost(model: CostModel, alpha: float) -> float:
    _check_alpha(alpha)
    return alpha * (model.tau_a + model.gamma * model.tau_review_a) + (1 - alpha) * (
        model.tau_a + model.tau_h
    )


def total_cost(model: CostModel, alpha: float, n: int) -> float:
    """N * [a*(tA + g*tR) + (1-a)*(tA + tH)]."""
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}", key="n")
    return n * per_task_cost(model, alpha)


def human_cost_share(model: CostModel, alpha: float) -> float:
    """Share of total cost spent on synchronous human labour. Independent of N."""
    denom = per_task_cost(model, alpha)
    if denom <= 0:
        raise DegenerateCost("per-task cost is zero; human share is undefined")
    return (1 - alpha) * model.tau_h / denom


def classify_regime(
    alpha: float,
    hisoai_threshold: float = DEFAULT_HISOAI_THRESHOLD,
    ideal_floor: float = DEFAULT_IDEAL_FLOOR,
) -> RegimeClassification:
    """Both boundaries are Transitional: the flag is strict below, ideal strict above."""
    _check_alpha(alpha)
    if not (_is_fraction(hisoai_threshold) and _is_fraction(ideal_floor)) or hisoai_threshold > ideal_floor:
        raise InvalidThresholds(
            f"need 0 <= hisoai_threshold <= ideal_floor <= 1, got {hisoai_threshold} / {ideal_floor}"
        )
    if alpha < hisoai_threshold:
        regime = Regime.HISOAI
    elif alpha > ideal_floor:
        regime = Regime.IDEAL_HITL
    else:
        regime = Regime.TRANSITIONAL
    return RegimeClassification(regime, alpha, hisoai_threshold, ideal_floor)
