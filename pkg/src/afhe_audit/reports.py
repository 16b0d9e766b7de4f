"""Labor allocation and report documents, with machine and text renderings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .core_metrics import (
    AlphaEstimate,
    CostModel,
    DecisionEvent,
    LaborRole,
    RegimeClassification,
    human_cost_share,
    per_task_cost,
    total_cost,
)
from .errors import DegenerateCost
from .event_ingest import canonical_json


@dataclass(frozen=True)
class LaborAllocation:
    proportions: dict[LaborRole, float]
    tagged_count: int
    untagged_human_count: int
    counts: dict[LaborRole, int] = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        """Tagged events over all events that should carry a role."""
        denom = self.tagged_count + self.untagged_human_count
        return self.tagged_count / denom if denom else 0.0

    @property
    def note(self) -> str:
        if self.tagged_count == 0:
            return "no role-tagged events; allocation empty (coverage 0)"
        if self.untagged_human_count:
            return f"{self.untagged_human_count} human-involved events carry no role tag and are excluded"
        return ""

    def share(self, role: LaborRole) -> float:
        return self.proportions.get(role, 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "proportions": {r.value: p for r, p in self.proportions.items()},
            "counts": {r.value: c for r, c in self.counts.items()},
            "tagged_count": self.tagged_count,
            "untagged_human_count": self.untagged_human_count,
            "coverage": self.coverage,
            "note": self.note,
        }


def labor_report(events: Iterable[DecisionEvent]) -> LaborAllocation:
    """Share of role-tagged human work per role.

    Roles are never inferred: human-involved events without a tag are
    counted separately and left out of the proportions.
    """
    counts = {r: 0 for r in LaborRole}
    untagged = 0
    for ev in events:
        if ev.human_role is not None:
            counts[ev.human_role] += 1
        elif ev.human_involved:
            untagged += 1
    tagged = sum(counts.values())
    if tagged == 0:
        return LaborAllocation({}, 0, untagged, {})
    return LaborAllocation({r: c / tagged for r, c in counts.items()}, tagged, untagged, counts)


@dataclass(frozen=True)
class CostBreakdown:
    model: CostModel
    alpha: float
    n: int

    @property
    def total(self) -> float:
        return total_cost(self.model, self.alpha, self.n)

    @property
    def per_task(self) -> float:
        return per_task_cost(self.model, self.alpha)

    @property
    def human_share(self) -> float | None:
        try:
            return human_cost_share(self.model, self.alpha)
        except DegenerateCost:
            return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "alpha": self.alpha,
            "n": self.n,
            "total_cost": self.total,
            "per_task_cost": self.per_task,
            "human_cost_share": self.human_share,
        }


@dataclass(frozen=True)
class ReportDocument:
    alpha: AlphaEstimate
    regime: RegimeClassification
    cost: CostBreakdown | None = None
    labor: LaborAllocation | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"alpha": self.alpha.to_dict(), "regime": self.regime.to_dict()}
        if self.cost is not None:
            out["cost"] = self.cost.to_dict()
        if self.labor is not None:
            out["labor"] = self.labor.to_dict()
        return out

    def rows(self) -> list[tuple[str, Any]]:
        rows = alpha_rows(self.alpha) + regime_rows(self.regime)
        if self.cost is not None:
            rows += cost_rows(self.cost)
        if self.labor is not None:
            rows += labor_rows(self.labor)
        return rows


def render_machine(payload: Any) -> str:
    """One canonical JSON line. The CLI and the HTTP service both use this."""
    return canonical_json(payload) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower() if v is not None else "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_text(rows: Sequence[tuple[str, Any]]) -> str:
    if not rows:
        return ""
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {_fmt(v)}\n" for k, v in rows)


def alpha_rows(est: AlphaEstimate) -> list[tuple[str, Any]]:
    return [
        ("alpha", est.alpha),
        ("ai_alone_count", est.ai_alone_count),
        ("total_count", est.total_count),
        ("ci95", f"[{est.ci_low:.4f}, {est.ci_high:.4f}]"),
    ]


def regime_rows(rc: RegimeClassification) -> list[tuple[str, Any]]:
    return [
        ("regime", rc.regime.value),
        ("thresholds", f"hisoai < {rc.hisoai_threshold:g}, ideal > {rc.ideal_floor:g}"),
    ]


def cost_rows(cb: CostBreakdown) -> list[tuple[str, Any]]:
    m = cb.model
    return [
        ("cost_params", f"tau_a={m.tau_a:g} tau_h={m.tau_h:g} gamma={m.gamma:g} tau_review_a={m.tau_review_a:g}"),
        ("n", cb.n),
        ("total_cost", cb.total),
        ("per_task_cost", cb.per_task),
        ("human_cost_share", cb.human_share),
    ]


def labor_rows(la: LaborAllocation) -> list[tuple[str, Any]]:
    rows: list[tuple[str, Any]] = [("labor_tagged", la.tagged_count), ("labor_untagged_human", la.untagged_human_count)]
    rows += [(f"labor.{r.value}", la.share(r)) for r in la.proportions]
    rows.append(("labor_coverage", la.coverage))
    if la.note:
        rows.append(("labor_note", la.note))
    return rows


def window_series_payload(series: Sequence[tuple[int, AlphaEstimate]]) -> dict[str, Any]:
    return {"series": [dict(window_start=start, **est.to_dict()) for start, est in series]}
