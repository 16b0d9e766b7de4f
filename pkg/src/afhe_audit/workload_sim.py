"""Synthetic decision workloads with known ground truth.

Randomness is counter-based: draw ``i`` of stream ``s`` is the ``i``-th
SplitMix64 output from a state keyed on ``(seed, s)``. No generator state is
carried between tasks, so any index range can be produced independently and
concatenated ranges equal the sequential stream.

The named scenarios are synthetic fixtures tuned to fixed summary figures
(alpha, disagreement rate, role mix); they carry no real task data.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import repeat
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.special import ndtr, ndtri

from .core_metrics import CostModel, Decider, DecisionEvent, LaborRole, Phase, _is_fraction, _unchecked_event
from .errors import ConfigError, UnknownScenario
from .gate_engine import PairedDecision, ScoredPrediction

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# stream ids
S_DECIDER = 1
S_ROUTE = 2
S_REVIEW = 3
S_ROLE = 4
S_CONFIDENCE = 5
S_CAPABLE = 6
S_DISAGREE = 7
S_LABEL = 8
S_OTHER_LABEL = 9

N_LABELS = 4


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (reference implementation)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    return mix64((seed & MASK64) ^ ((stream * GOLDEN) & MASK64))


def uniform_scalar(seed: int, stream: int, index: int) -> float:
    """Draw ``index`` of ``stream`` as a float in [0, 1). Slow; used as a cross-check."""
    x = mix64(stream_key(seed, stream) + (index + 1) * GOLDEN)
    return (x >> 11) * (1.0 / (1 << 53))


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """Draws ``start..stop-1`` of ``stream``; bit-identical to ``uniform_scalar``."""
    key = np.uint64(stream_key(seed, stream))
    idx = np.arange(start + 1, stop + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _mix64_np(key + idx * np.uint64(GOLDEN))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class ConfidenceDist:
    """Normal(mean, spread) truncated to [0, 1]; ``spread == 0`` is a point mass."""

    mean: float
    spread: float = 0.0

    def __post_init__(self) -> None:
        if not _is_fraction(self.mean):
            raise ConfigError("confidence mean must lie in [0, 1]", key="mean")
        if not isinstance(self.spread, (int, float)) or isinstance(self.spread, bool) or self.spread < 0:
            raise ConfigError("confidence spread must be >= 0", key="spread")

    def ppf(self, u: np.ndarray) -> np.ndarray:
        if self.spread == 0:
            return np.full(u.shape, float(self.mean))
        # mean lies in [0, 1], so the standardized bounds straddle zero and
        # the retained mass is never a difference of two near-equal tails
        lo = ndtr((0.0 - self.mean) / self.spread)
        hi = ndtr((1.0 - self.mean) / self.spread)
        x = self.mean + self.spread * ndtri(lo + u * (hi - lo))
        return np.clip(x, 0.0, 1.0)

    def to_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "spread": self.spread}


@dataclass(frozen=True)
class WorkloadSpec:
    """Ground-truth parameters for one synthetic workload.

    ``drift`` is a list of ``(time_fraction, autonomy)`` breakpoints; the
    per-task autonomy is linearly interpolated over the task's position in
    the stream and held flat outside the breakpoints. ``sync_human_fraction``
    splits human-involved operational tasks between AI-with-sync-human and
    human-only. ``role_mix`` (weights per role) tags human-involved events;
    empty means untagged.
    """

    ground_truth_autonomy: float
    confidence_given_autonomous: ConfidenceDist = ConfidenceDist(0.95, 0.03)
    confidence_given_dependent: ConfidenceDist = ConfidenceDist(0.4, 0.1)
    disagreement_rate: float | None = None
    cost_model: CostModel = CostModel(1.0, 30.0)
    n_tasks: int = 10_000
    seed: int = 42
    drift: tuple[tuple[float, float], ...] = ()
    sync_human_fraction: float = 0.5
    role_mix: Mapping[LaborRole, float] = field(default_factory=dict)
    start_ms: int = 1_700_000_000_000
    interval_ms: int = 1_000
    name: str = "custom"
    description: str = ""

    def __post_init__(self) -> None:
        if not _is_fraction(self.ground_truth_autonomy):
            raise ConfigError("ground_truth_autonomy must lie in [0, 1]", key="ground_truth_autonomy")
        if self.disagreement_rate is not None and not _is_fraction(self.disagreement_rate):
            raise ConfigError("disagreement_rate must lie in [0, 1]", key="disagreement_rate")
        if not _is_fraction(self.sync_human_fraction):
            raise ConfigError("sync_human_fraction must lie in [0, 1]", key="sync_human_fraction")
        if isinstance(self.n_tasks, bool) or not isinstance(self.n_tasks, int) or self.n_tasks < 1:
            raise ConfigError("n_tasks must be a positive integer", key="n_tasks")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer", key="seed")
        if self.interval_ms < 1 or self.start_ms < 0:
            raise ConfigError("start_ms must be >= 0 and interval_ms >= 1", key="interval_ms")
        prev = -1.0
        for frac, level in self.drift:
            if not (_is_fraction(frac) and _is_fraction(level)):
                raise ConfigError("drift breakpoints must be fractions in [0, 1]", key="drift")
            if frac < prev:
                raise ConfigError("drift breakpoints must be time-ordered", key="drift")
            prev = frac
        for role, w in self.role_mix.items():
            if not isinstance(role, LaborRole) or w < 0:
                raise ConfigError("role_mix needs LaborRole keys and non-negative weights", key="role_mix")
        if self.role_mix and sum(self.role_mix.values()) <= 0:
            raise ConfigError("role_mix weights sum to zero", key="role_mix")

    @property
    def effective_disagreement(self) -> float:
        if self.disagreement_rate is not None:
            return self.disagreement_rate
        return 1.0 - self.ground_truth_autonomy

    def with_overrides(self, **kw: Any) -> WorkloadSpec:
        return replace(self, **kw)

    def autonomy_at(self, positions: np.ndarray) -> np.ndarray:
        if not self.drift:
            return np.full(positions.shape, float(self.ground_truth_autonomy))
        xs = np.array([f for f, _ in self.drift], dtype=float)
        ys = np.array([a for _, a in self.drift], dtype=float)
        return np.interp(positions, xs, ys)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "ground_truth_autonomy": self.ground_truth_autonomy,
            "confidence_given_autonomous": self.confidence_given_autonomous.to_dict(),
            "confidence_given_dependent": self.confidence_given_dependent.to_dict(),
            "disagreement_rate": self.disagreement_rate,
            "cost_model": self.cost_model.to_dict(),
            "n_tasks": self.n_tasks,
            "seed": self.seed,
            "drift": [list(p) for p in self.drift],
            "sync_human_fraction": self.sync_human_fraction,
            "role_mix": {r.value: w for r, w in self.role_mix.items()},
            "start_ms": self.start_ms,
            "interval_ms": self.interval_ms,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> WorkloadSpec:
        kw: dict[str, Any] = dict(d)
        try:
            for key in ("confidence_given_autonomous", "confidence_given_dependent"):
                if key in kw:
                    kw[key] = ConfidenceDist(**kw[key])
            if "cost_model" in kw:
                kw["cost_model"] = CostModel(**kw["cost_model"])
            if "drift" in kw:
                kw["drift"] = tuple((float(f), float(a)) for f, a in kw["drift"])
            if "role_mix" in kw:
                kw["role_mix"] = {LaborRole(r): float(w) for r, w in kw["role_mix"].items()}
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid workload spec: {exc}") from None


def load_spec(path: str | os.PathLike[str]) -> WorkloadSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read workload spec {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("workload spec must be a JSON object")
    return WorkloadSpec.from_dict(data)


def _range(spec: WorkloadSpec, start: int, stop: int | None) -> tuple[int, int]:
    stop = spec.n_tasks if stop is None else min(stop, spec.n_tasks)
    if start < 0 or start > stop:
        raise ConfigError(f"bad index range [{start}, {stop})")
    return start, stop


@lru_cache(maxsize=8)
def _task_ids(prefix: str, start: int, stop: int) -> tuple[str, ...]:
    return tuple(f"{prefix}-{i:07d}" for i in range(start, stop))


_LABELS = tuple(f"class-{k}" for k in range(N_LABELS))
_LABEL_OR_NONE = np.array(_LABELS + (None,), dtype=object)
_DECIDERS = np.array([Decider.AI_ALONE, Decider.AI_WITH_SYNC_HUMAN, Decider.HUMAN_ONLY], dtype=object)


def _labels(seed: int, start: int, stop: int) -> np.ndarray:
    return (uniforms(seed, S_LABEL, start, stop) * N_LABELS).astype(np.int64)


def _other_labels(seed: int, labels: np.ndarray, start: int, stop: int) -> np.ndarray:
    shift = 1 + (uniforms(seed, S_OTHER_LABEL, start, stop) * (N_LABELS - 1)).astype(np.int64)
    return (labels + shift) % N_LABELS


def ai_alone_draws(spec: WorkloadSpec, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Boolean mask of tasks the AI handles alone in operation."""
    start, stop = _range(spec, start, stop)
    n = spec.n_tasks
    pos = np.arange(start, stop, dtype=float) / (n - 1 if n > 1 else 1)
    return uniforms(spec.seed, S_DECIDER, start, stop) < spec.autonomy_at(pos)


def simulate_operational(spec: WorkloadSpec, start: int = 0, stop: int | None = None) -> list[DecisionEvent]:
    """Operational decision log; tasks ``start..stop-1`` of the full stream."""
    start, stop = _range(spec, start, stop)
    seed = spec.seed
    u_conf = uniforms(seed, S_CONFIDENCE, start, stop)
    alone = ai_alone_draws(spec, start, stop)
    sync = uniforms(seed, S_ROUTE, start, stop) < spec.sync_human_fraction
    reviewed = alone & (uniforms(seed, S_REVIEW, start, stop) < spec.cost_model.gamma)
    conf = np.where(
        alone,
        spec.confidence_given_autonomous.ppf(u_conf),
        spec.confidence_given_dependent.ppf(u_conf),
    )
    labels = _labels(seed, start, stop)
    # index N_LABELS looks up None: no AI decision on human-only tasks,
    # no human decision on AI-alone tasks
    ai_idx = np.where(alone, labels, np.where(sync, _other_labels(seed, labels, start, stop), N_LABELS))
    human_idx = np.where(alone, N_LABELS, labels)
    decider_idx = np.where(alone, 0, np.where(sync, 1, 2))

    n = stop - start
    if spec.role_mix:
        names = list(spec.role_mix)
        cum = np.cumsum([spec.role_mix[r] for r in names])
        role_idx = np.searchsorted(cum / cum[-1], uniforms(seed, S_ROLE, start, stop), side="right")
        role_idx = np.where(alone, len(names), np.minimum(role_idx, len(names) - 1))
        roles = np.array(names + [None], dtype=object)[role_idx].tolist()
    else:
        roles = [None] * n

    deciders = _DECIDERS[decider_idx].tolist()
    timestamps = range(spec.start_ms + start * spec.interval_ms, spec.start_ms + stop * spec.interval_ms, spec.interval_ms)
    return list(
        map(
            _unchecked_event,
            _task_ids("op", start, stop),
            timestamps,
            deciders,
            repeat(Phase.OPERATIONAL, n),
            conf.tolist(),
            _LABEL_OR_NONE[ai_idx].tolist(),
            _LABEL_OR_NONE[human_idx].tolist(),
            reviewed.tolist(),
            roles,
        )
    )


def simulate_offline(spec: WorkloadSpec, start: int = 0, stop: int | None = None) -> list[ScoredPrediction]:
    """Scored predictions on a held-out test set."""
    start, stop = _range(spec, start, stop)
    seed = spec.seed
    capable = uniforms(seed, S_CAPABLE, start, stop) < spec.ground_truth_autonomy
    u = uniforms(seed, S_CONFIDENCE, start, stop)
    conf = np.where(
        capable,
        spec.confidence_given_autonomous.ppf(u),
        spec.confidence_given_dependent.ppf(u),
    ).tolist()
    labels = _labels(seed, start, stop).tolist()
    ids = _task_ids("test", start, stop)
    return [ScoredPrediction(ids[j], conf[j], _LABELS[labels[j]]) for j in range(stop - start)]


def disagree_draws(spec: WorkloadSpec, start: int = 0, stop: int | None = None) -> np.ndarray:
    start, stop = _range(spec, start, stop)
    return uniforms(spec.seed, S_DISAGREE, start, stop) < spec.effective_disagreement


def simulate_shadow(spec: WorkloadSpec, start: int = 0, stop: int | None = None) -> list[PairedDecision]:
    """Blind AI/human decision pairs; each disagrees with probability ``disagreement_rate``."""
    start, stop = _range(spec, start, stop)
    seed = spec.seed
    disagree = disagree_draws(spec, start, stop)
    human = _labels(seed, start, stop)
    ai = np.where(disagree, _other_labels(seed, human, start, stop), human).tolist()
    human = human.tolist()
    ids = _task_ids("shadow", start, stop)
    return [PairedDecision.compare(ids[j], _LABELS[ai[j]], _LABELS[human[j]]) for j in range(stop - start)]


_SCENARIOS: dict[str, WorkloadSpec] = {
    # Legacy system diagnosed at alpha 0.38. Costs: tau_A=1, tau_H=30, no
    # async review, which puts ~94.9% of cost on human labour at alpha 0.38.
    "legacy-hisoai": WorkloadSpec(
        ground_truth_autonomy=0.38,
        confidence_given_autonomous=ConfidenceDist(0.9, 0.05),
        confidence_given_dependent=ConfidenceDist(0.35, 0.15),
        disagreement_rate=0.62,
        cost_model=CostModel(tau_a=1.0, tau_h=30.0, gamma=0.0, tau_review_a=0.0),
        role_mix={
            LaborRole.SUBSTITUTION: 0.93,
            LaborRole.BOUNDARY_PUSH: 0.04,
            LaborRole.ETHICAL_OVERSIGHT: 0.03,
        },
        name="legacy-hisoai",
        description="synthetic legacy system, operational alpha 0.38",
    ),
    # First gated attempt: offline alpha ~0.45 at theta 0.8.
    "afhe-iteration-1": WorkloadSpec(
        ground_truth_autonomy=0.45,
        confidence_given_autonomous=ConfidenceDist(0.93, 0.03),
        confidence_given_dependent=ConfidenceDist(0.4, 0.1),
        disagreement_rate=0.55,
        cost_model=CostModel(tau_a=1.0, tau_h=30.0, gamma=0.1, tau_review_a=2.0),
        role_mix={
            LaborRole.SUBSTITUTION: 0.9,
            LaborRole.BOUNDARY_PUSH: 0.05,
            LaborRole.STRATEGIC_TUNING: 0.05,
        },
        name="afhe-iteration-1",
        description="synthetic first gated iteration, alpha 0.45 (blocked)",
    ),
    # System cleared for deployment: shadow alpha 0.85.
    "afhe-final": WorkloadSpec(
        ground_truth_autonomy=0.85,
        confidence_given_autonomous=ConfidenceDist(0.95, 0.03),
        confidence_given_dependent=ConfidenceDist(0.4, 0.1),
        disagreement_rate=0.15,
        cost_model=CostModel(tau_a=1.0, tau_h=30.0, gamma=0.1, tau_review_a=2.0),
        role_mix={
            LaborRole.STRATEGIC_TUNING: 0.4,
            LaborRole.ETHICAL_OVERSIGHT: 0.3,
            LaborRole.BOUNDARY_PUSH: 0.3,
        },
        name="afhe-final",
        description="synthetic final gated system, shadow alpha 0.85 (cleared)",
    ),
}


def scenario_names() -> list[str]:
    return sorted(_SCENARIOS)


def builtin_scenario(name: str) -> WorkloadSpec:
    try:
        return _SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(
            f"unknown scenario {name!r}; available: {', '.join(scenario_names())}",
            available=scenario_names(),
        ) from None
