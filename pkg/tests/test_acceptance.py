"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary of
all criteria is printed at the end of the session.
"""

from __future__ import annotations

import functools
import json
import math
import random
import signal
import socket
import subprocess
import sys
import time
from fractions import Fraction

import httpx
import pytest
from fastapi.testclient import TestClient

from afhe_audit.core_metrics import (
    CostModel,
    Decider,
    LaborRole,
    Phase,
    compute_alpha,
    compute_alpha_windowed,
    human_cost_share,
    total_cost,
)
from afhe_audit.errors import IllegalTransition
from afhe_audit.event_ingest import EventStore, append_events, parse_event_line, read_events, serialize_event
from afhe_audit.gate_engine import (
    GateConfig,
    GateHistoryLog,
    GatePhase,
    GateState,
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
from afhe_audit.monitor_service import HISTORY_NAME, ServiceConfig, create_app
from afhe_audit.reports import labor_report, render_machine, window_series_payload
from afhe_audit.workload_sim import WorkloadSpec, builtin_scenario, simulate_operational

from conftest import ACCEPTANCE_RESULTS, make_event, stream
from fuzz_corpus import corpus, oracle_canonical

pytestmark = pytest.mark.acceptance

A, S, H = Decider.AI_ALONE, Decider.AI_WITH_SYNC_HUMAN, Decider.HUMAN_ONLY
CLI = [sys.executable, "-m", "afhe_audit"]


def criterion(key: str):
    """Record the (ok, detail) returned by the body; a crash records FAIL."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                ACCEPTANCE_RESULTS[key] = (False, f"{type(exc).__name__}: {exc}")
                print(f"FAIL  {key}: {type(exc).__name__}: {exc}")
                raise
            ACCEPTANCE_RESULTS[key] = (ok, detail)
            print(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
            assert ok, detail

        return wrapper

    return deco


def cli(*argv: str, stdin: str | None = None) -> subprocess.CompletedProcess:
    return subprocess.run([*CLI, *argv], input=stdin, capture_output=True, text=True)


# 1 ---------------------------------------------------------------------------


@criterion("1 HISOAI diagnosis")
def test_1_hisoai_diagnosis():
    t0 = time.perf_counter()
    sim = cli("simulate", "--scenario", "legacy-hisoai", "--seed", "42")
    alpha = cli("alpha", "--format", "machine", stdin=sim.stdout)
    regime = cli("regime", "--format", "machine", stdin=sim.stdout)
    elapsed = time.perf_counter() - t0
    a = json.loads(alpha.stdout)
    r = json.loads(regime.stdout)
    ok = (
        sim.returncode == alpha.returncode == regime.returncode == 0
        and a["total_count"] == 10_000
        and abs(a["alpha"] - 0.38) <= 0.02
        and r["regime"]["regime"] == "hisoai"
        and elapsed < 5.0
    )
    return ok, f"alpha={a['alpha']:.4f} (0.38 +/- 0.02), regime={r['regime']['regime']}, {elapsed:.2f}s (< 5s)"


# 2 ---------------------------------------------------------------------------


@criterion("2 cost share")
def test_2_cost_share():
    m = builtin_scenario("legacy-hisoai").cost_model
    share = human_cost_share(m, 0.38)
    a = Fraction(38, 100)
    ta, th, g, tr = (Fraction(x) for x in (m.tau_a, m.tau_h, m.gamma, m.tau_review_a))
    exact = (1 - a) * th / (a * (ta + g * tr) + (1 - a) * (ta + th))
    ok = share > 0.9 and math.isclose(share, float(exact), rel_tol=1e-9) and exact == Fraction(93, 98)
    return ok, f"human_cost_share={share:.6f}, exact 93/98={float(exact):.6f} (rel 1e-9), > 0.9"


# 3 ---------------------------------------------------------------------------


@criterion("3 gate iterations")
def test_3_gate_iterations(tmp_path):
    hist = str(tmp_path / "gate.ndjson")
    gate = ["--target", "0.8", "--theta", "0.8", "--history", hist, "--format", "machine"]
    t0 = time.perf_counter()
    first = cli("gate", "run", "--scenario", "afhe-iteration-1", *gate)
    resume = cli("gate", "resume", "--history", hist)
    second = cli("gate", "run", "--scenario", "afhe-final", "--cycles", "10000", *gate)
    elapsed = time.perf_counter() - t0
    v1 = json.loads(first.stdout)["verdicts"]
    v2 = json.loads(second.stdout)
    a1 = v1[-1]["measured_alpha"]["alpha"]
    shadow = v2["verdicts"][-1]
    a2 = shadow["measured_alpha"]["alpha"]
    ok = (
        first.returncode == 1
        and v1[-1]["outcome"] == "hisoai_flag"
        and abs(a1 - 0.45) <= 0.02
        and resume.returncode == 0
        and second.returncode == 0
        and shadow["phase"] == "shadow_eval"
        and shadow["outcome"] == "pass"
        and shadow["measured_alpha"]["total_count"] == 10_000
        and abs(a2 - 0.85) <= 0.01
        and v2["gate"]["phase"] == "deployed"
        and elapsed < 5.0
    )
    return ok, (
        f"iteration-1 flag alpha={a1:.4f} exit {first.returncode}; "
        f"final pass alpha_shadow={a2:.4f} (M=10000) exit {second.returncode}; {elapsed:.2f}s"
    )


# 4 ---------------------------------------------------------------------------


@criterion("4 labor shift")
def test_4_labor_shift():
    legacy = [make_event(S, role=LaborRole.SUBSTITUTION) for _ in range(450)]
    legacy += [make_event(H, role=LaborRole.SUBSTITUTION) for _ in range(450)]
    legacy += [make_event(H, role=LaborRole.ETHICAL_OVERSIGHT) for _ in range(60)]
    legacy += [make_event(S, role=LaborRole.BOUNDARY_PUSH) for _ in range(40)]
    legacy += [make_event(A) for _ in range(600)]
    before = labor_report(legacy)

    final = simulate_operational(builtin_scenario("afhe-final"))
    after = labor_report(final)
    tagged = sum(1 for e in final if e.human_role is not None)
    ok = (
        before.counts[LaborRole.SUBSTITUTION] == 900
        and before.tagged_count == 1000
        and before.share(LaborRole.SUBSTITUTION) >= 0.9
        and after.counts[LaborRole.SUBSTITUTION] == 0
        and after.share(LaborRole.SUBSTITUTION) == 0.0
        and after.tagged_count == tagged > 0
    )
    return ok, (
        f"legacy substitution={before.share(LaborRole.SUBSTITUTION):.3f} (900/1000); "
        f"afhe-final substitution={after.share(LaborRole.SUBSTITUTION)} over {after.tagged_count} tagged"
    )


# 5 ---------------------------------------------------------------------------


@criterion("5 estimator property")
def test_5_estimator_property():
    n, seeds = 10_000, 1000
    rnd = random.Random(5)
    t0 = time.perf_counter()
    misses = 0
    for seed in range(seeds):
        p = round(rnd.uniform(0.02, 0.98), 4)
        est = compute_alpha(simulate_operational(WorkloadSpec(p, n_tasks=n, seed=seed)))
        if abs(est.alpha - p) > 4 * math.sqrt(p * (1 - p) / n):
            misses += 1
    elapsed = time.perf_counter() - t0
    ok = misses <= seeds // 100 and elapsed < 60.0
    return ok, f"{misses}/{seeds} seeds beyond 4 sigma (<= 1%), {elapsed:.1f}s (< 60s)"


# 6 ---------------------------------------------------------------------------


def _exact_cost(ta, th, g, tr, a, n) -> Fraction:
    ta, th, g, tr, a = (Fraction(x) for x in (ta, th, g, tr, a))
    return n * (a * (ta + g * tr) + (1 - a) * (ta + th))


def _close(x: float, exact: Fraction) -> bool:
    return math.isclose(x, float(exact), rel_tol=1e-9, abs_tol=1e-12)


@criterion("6 cost property")
def test_6_cost_property():
    rnd = random.Random(6)
    points = failures = 0
    for i in range(10_000):
        ta = rnd.choice([0.0, rnd.uniform(0, 10), float(rnd.randint(1, 5))])
        th = rnd.choice([0.0, rnd.uniform(0, 100), float(rnd.randint(1, 60))])
        g = rnd.choice([0.0, 1.0, rnd.random()])
        tr = rnd.choice([0.0, rnd.uniform(0, 200)])
        if i % 10 == 0:
            # slope exactly zero: review cost equals human cost
            g, tr, th = 0.5, 40.0, 20.0
        m = CostModel(ta, th, g, tr)
        a = rnd.random()
        n1, n2 = rnd.randint(0, 10**6), rnd.randint(0, 10**6)
        c1, c2 = total_cost(m, a, n1), total_cost(m, a, n2)
        ok = (
            _close(c1, _exact_cost(ta, th, g, tr, a, n1))
            and _close(total_cost(m, a, n1 + n2), _exact_cost(ta, th, g, tr, a, n1 + n2))
            and math.isclose(total_cost(m, a, n1 + n2), c1 + c2, rel_tol=1e-9, abs_tol=1e-12)
            and total_cost(CostModel(ta, th, 0.0, tr), 1.0, n1) == n1 * ta
            and _close(total_cost(m, 0.0, n1), Fraction(n1) * (Fraction(ta) + Fraction(th)))
        )
        # monotonicity in alpha: sign of (gamma*tau_review - tau_h)
        b = rnd.random()
        lo, hi = min(a, b), max(a, b)
        slope = Fraction(g) * Fraction(tr) - Fraction(th)
        exact_diff = _exact_cost(ta, th, g, tr, hi, n1) - _exact_cost(ta, th, g, tr, lo, n1)
        diff = total_cost(m, hi, n1) - total_cost(m, lo, n1)
        scale = max(abs(total_cost(m, hi, n1)), abs(total_cost(m, lo, n1)), 1.0)
        ok = ok and (exact_diff > 0) - (exact_diff < 0) == ((slope > 0) - (slope < 0)) * (hi > lo) * (n1 > 0)
        ok = ok and abs(diff - float(exact_diff)) <= 1e-9 * scale
        points += 1
        failures += not ok
    return failures == 0, f"{points} grid points, {failures} violations (linearity, boundaries, monotonicity sign)"


# 7 ---------------------------------------------------------------------------

_LEGAL = {
    (GatePhase.OFFLINE_EVAL, Outcome.PASS): GatePhase.SHADOW_EVAL,
    (GatePhase.OFFLINE_EVAL, Outcome.HISOAI_FLAG): GatePhase.REENGINEERING,
    (GatePhase.SHADOW_EVAL, Outcome.PASS): GatePhase.DEPLOYED,
    (GatePhase.SHADOW_EVAL, Outcome.HISOAI_FLAG): GatePhase.REENGINEERING,
    (GatePhase.DEPLOYED, Outcome.HEALTHY): GatePhase.DEPLOYED,
    (GatePhase.DEPLOYED, Outcome.TRIGGER): GatePhase.REENGINEERING,
    (GatePhase.REENGINEERING, Outcome.RESUME): GatePhase.OFFLINE_EVAL,
}


def _gate_case(rnd: random.Random) -> bool:
    """One randomized case; True when the engine behaves soundly."""
    kind = rnd.randrange(4)
    grid = [0.0, 0.25, 0.5, 0.8, 0.85, 0.9, 1.0]
    if kind == 0:
        n = rnd.randint(1, 60)
        theta = rnd.choice(grid + [rnd.random()])
        confs = [rnd.choice(grid + [theta, rnd.random()]) for _ in range(n)]
        target = rnd.choice(grid + [rnd.random(), rnd.randint(0, n) / n])
        preds = [ScoredPrediction(f"p{i}", c, "x") for i, c in enumerate(confs)]
        est, v = offline_evaluate(preds, GateConfig(alpha_target=target, theta=theta))
        alpha = sum(c > theta for c in confs) / n
    elif kind == 1:
        n = rnd.randint(1, 60)
        agree = [rnd.random() < rnd.random() for _ in range(n)]
        target = rnd.choice(grid + [rnd.random(), rnd.randint(0, n) / n])
        pairs = [PairedDecision.compare(f"s{i}", "a", "a" if ok else "b") for i, ok in enumerate(agree)]
        est, v = shadow_evaluate(pairs, GateConfig(alpha_target=target, shadow_cycles=n))
        alpha = sum(agree) / n
    elif kind == 2:
        target = rnd.choice(grid[1:-1])
        k = rnd.randint(1, 5)
        deciders = [A if rnd.random() < rnd.choice([0.3, 0.8, 0.95]) else H for _ in range(rnd.randint(1, 120))]
        w = rnd.randint(1, 20)
        series = compute_alpha_windowed(stream(deciders), w, w)
        trig = steady_state_check(series, GateConfig(alpha_target=target, consecutive_breaches=k))
        below = [est.alpha < target for _, est in series]
        has_run = any(all(below[i : i + k]) for i in range(len(below) - k + 1))
        if trig is None:
            return not has_run
        run = below[trig.first_index : trig.last_index + 1]
        return has_run and all(run) and len(run) >= k and not any(all(below[i : i + k]) for i in range(trig.last_index + 1, len(below) - k + 1))
    else:
        return _history_case(rnd)
    if est.alpha != alpha:
        return False
    if v.outcome is Outcome.PASS:
        return alpha >= target
    return v.outcome is Outcome.HISOAI_FLAG and alpha < target


def _history_case(rnd: random.Random) -> bool:
    state = GateState.initial()
    ts = rnd.randint(0, 1000)
    flags = 0
    for _ in range(rnd.randint(1, 15)):
        options = [o for (p, o) in _LEGAL if p is state.phase]
        outcome = rnd.choice(options)
        ts += rnd.randint(1, 50)
        state = gate_advance(state, PhaseResult(state.phase, outcome, ts))
        flags += outcome is Outcome.HISOAI_FLAG
    if replay(state.history) != state or state.reengineering_cycles != flags:
        return False
    # every illegal move from here is refused, as are stale timestamps
    for outcome in Outcome:
        if (state.phase, outcome) in _LEGAL:
            try:
                gate_advance(state, PhaseResult(state.phase, outcome, ts))
                return False
            except IllegalTransition:
                pass
            continue
        try:
            gate_advance(state, PhaseResult(state.phase, outcome, ts + 1))
            return False
        except IllegalTransition:
            pass
    other = rnd.choice([p for p in GatePhase if p is not state.phase])
    try:
        gate_advance(state, PhaseResult(other, Outcome.PASS, ts + 1))
        return False
    except IllegalTransition:
        return True


@criterion("7 gate soundness")
def test_7_gate_soundness():
    rnd = random.Random(7)
    t0 = time.perf_counter()
    cases = 12_000
    bad = sum(not _gate_case(rnd) for _ in range(cases))
    elapsed = time.perf_counter() - t0
    return bad == 0 and elapsed < 30.0, f"{cases} randomized cases, {bad} unsound, {elapsed:.1f}s (< 30s)"


# 8 ---------------------------------------------------------------------------


@criterion("8 streaming/batch equivalence")
def test_8_streaming_equivalence(tmp_path):
    rnd = random.Random(8)
    mismatches = 0
    for _ in range(500):
        evs = stream([rnd.choice([A, S, H]) for _ in range(rnd.randint(1, 400))], start=rnd.randint(0, 10**6), step=rnd.randint(1, 9))
        batch = compute_alpha(evs)
        span = evs[-1].timestamp - evs[0].timestamp + 1
        by_count = compute_alpha_windowed(evs, len(evs) + rnd.randint(0, 5), 1)
        by_time = compute_alpha_windowed(evs, span + rnd.randint(0, 5), 1, by="time")
        mismatches += [e for _, e in by_count] != [batch] or [e for _, e in by_time] != [batch]

    store = tmp_path / "store"
    log = GateHistoryLog(store / HISTORY_NAME)
    log.advance(PhaseResult(GatePhase.OFFLINE_EVAL, Outcome.PASS, 1))
    log.advance(PhaseResult(GatePhase.SHADOW_EVAL, Outcome.PASS, 2))
    client = TestClient(create_app(ServiceConfig(GateConfig(alpha_target=0.8, monitor_window=500), store)))
    evs = simulate_operational(builtin_scenario("afhe-final").with_overrides(n_tasks=6000))
    for k in range(0, 6000, 1000):
        client.post("/v1/events", content="".join(serialize_event(e) + "\n" for e in evs[k : k + 1000]))
    offline = compute_alpha_windowed(read_events(EventStore(store), phase=Phase.OPERATIONAL), 500, 500)
    served = [client.get("/v1/alpha", params={"windows": k}).content for k in (1, 5, len(offline))]
    expected = [render_machine(window_series_payload(offline[-k:])).encode() for k in (1, 5, len(offline))]
    identical = served == expected
    ok = mismatches == 0 and identical
    return ok, f"500 logs single-window == batch ({mismatches} mismatches); service /v1/alpha byte-identical: {identical}"


# 9 ---------------------------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _durable_across_kill(tmp_path) -> tuple[bool, str]:
    """Ack from a live server, SIGKILL it, then read the store cold."""
    store = tmp_path / "live"
    log = GateHistoryLog(store / HISTORY_NAME)
    log.advance(PhaseResult(GatePhase.OFFLINE_EVAL, Outcome.PASS, 1))
    log.advance(PhaseResult(GatePhase.SHADOW_EVAL, Outcome.PASS, 2))
    port = _free_port()
    proc = subprocess.Popen(
        [*CLI, "serve", "--store", str(store), "--target", "0.8", "--window", "100", "--port", str(port)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    base = f"http://127.0.0.1:{port}"
    evs = simulate_operational(builtin_scenario("afhe-final").with_overrides(n_tasks=500))
    try:
        deadline = time.monotonic() + 30
        while True:
            try:
                if httpx.get(f"{base}/v1/healthz", timeout=1).status_code == 200:
                    break
            except httpx.TransportError:
                pass
            if time.monotonic() > deadline or proc.poll() is not None:
                return False, "server did not come up"
            time.sleep(0.1)
        data = "".join(serialize_event(e) + "\n" for e in evs)
        r = httpx.post(f"{base}/v1/events", content=data, headers={"Idempotency-Key": "batch-1"}, timeout=30)
        acked = r.status_code == 200 and r.json()["accepted"] == len(evs)
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait()
    survived = read_events(EventStore(store)) == evs
    return acked and survived, f"{len(evs)} acked events survive SIGKILL: {survived}"


@criterion("9 persistence")
def test_9_persistence(tmp_path):
    lines = corpus()
    roundtrip_bad = 0
    for i, raw in enumerate(lines, 1):
        canon = serialize_event(parse_event_line(raw, i))
        roundtrip_bad += canon != oracle_canonical(raw) or serialize_event(parse_event_line(canon)) != canon

    durable, durable_detail = _durable_across_kill(tmp_path)

    store = EventStore(tmp_path / "replay")
    batch = [parse_event_line(raw) for raw in lines[:200]]
    first = append_events(store, batch, batch_key="fuzz-200")
    before = EventStore(store.root).manifest().total
    again = append_events(EventStore(store.root), batch, batch_key="fuzz-200")
    after = EventStore(store.root).manifest().total
    idempotent = first.count == 200 and again.count == 0 and again.duplicate and before == after == 200

    ok = roundtrip_bad == 0 and durable and idempotent
    return ok, (
        f"round-trip {len(lines) - roundtrip_bad}/{len(lines)}; {durable_detail}; "
        f"replay added {after - before} events"
    )


def test_acceptance_runs_all_criteria():
    """Guard against a criterion silently dropping out of this module."""
    names = [n for n in globals() if n.startswith("test_") and n[5].isdigit()]
    assert sorted(int(n.split("_")[1]) for n in names) == list(range(1, 10))
