from __future__ import annotations

import itertools

import pytest

from afhe_audit.core_metrics import Decider, DecisionEvent, LaborRole, Phase

_ids = itertools.count()


def make_event(
    decider: Decider = Decider.AI_ALONE,
    timestamp: int | None = None,
    phase: Phase = Phase.OPERATIONAL,
    role: LaborRole | None = None,
    **kw,
) -> DecisionEvent:
    n = next(_ids)
    if decider is Decider.AI_ALONE:
        kw.setdefault("ai_decision", "approve")
    else:
        kw.setdefault("human_decision", "approve")
    return DecisionEvent(
        task_id=kw.pop("task_id", f"t{n}"),
        timestamp=n if timestamp is None else timestamp,
        decider=decider,
        phase=phase,
        human_role=role,
        **kw,
    )


def stream(deciders, start: int = 0, step: int = 1, **kw) -> list[DecisionEvent]:
    return [make_event(d, timestamp=start + i * step, **kw) for i, d in enumerate(deciders)]


@pytest.fixture
def ev():
    return make_event


# acceptance criteria record one line each here; printed at the end of the run
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
