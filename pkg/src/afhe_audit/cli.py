"""Command-line front end.

Exit codes: 0 success, 1 a HISOAI flag was raised (offline or shadow gate
failure, or a steady-state re-engineering trigger), 2 usage, parse or
runtime errors. Every error is a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import IO, Any, Callable, Sequence

from . import __version__
from .core_metrics import (
    DEFAULT_HISOAI_THRESHOLD,
    DEFAULT_IDEAL_FLOOR,
    CostModel,
    DecisionEvent,
    Phase,
    classify_regime,
    compute_alpha,
    compute_alpha_windowed,
)
from .errors import AuditError, EmptyLog, StoreIoError
from .event_ingest import EventStore, parse_event_lines, read_events, write_events
from .gate_engine import (
    GateConfig,
    GateHistoryLog,
    GateState,
    GateVerdict,
    Outcome,
    PhaseResult,
    gate_advance,
    offline_evaluate,
    parse_pair_lines,
    parse_prediction_lines,
    pair_to_dict,
    prediction_to_dict,
    shadow_evaluate,
    steady_state_check,
)
from .reports import (
    CostBreakdown,
    ReportDocument,
    alpha_rows,
    cost_rows,
    labor_report,
    labor_rows,
    regime_rows,
    render_machine,
    render_text,
    window_series_payload,
)
from .workload_sim import (
    WorkloadSpec,
    builtin_scenario,
    load_spec,
    simulate_offline,
    simulate_operational,
    simulate_shadow,
)

EXIT_OK = 0
EXIT_FLAG = 1
EXIT_ERROR = 2

STORE_ENV = "AFHE_STORE"


class UsageError(AuditError):
    code = "UsageError"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as one JSON line."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


class _Ctx:
    def __init__(self, stdin: IO[str], stdout: IO[str], stderr: IO[str]) -> None:
        self.stdin = stdin
        self.stdout = stdout
        self.stderr = stderr


def _fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1]: {text}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text}")
    return v


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text}")
    return v


def _read_lines(ctx: _Ctx, path: str | None) -> list[str]:
    if path is None or path == "-":
        return ctx.stdin.read().splitlines()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc.strerror or exc}", path=path) from None


def _store_path(args: argparse.Namespace) -> str | None:
    return getattr(args, "store", None) or os.environ.get(STORE_ENV) or None


def _load_events(ctx: _Ctx, args: argparse.Namespace) -> list[DecisionEvent]:
    """Events from FILE, else from the store if one is configured, else stdin."""
    path = getattr(args, "file", None)
    phase = Phase(args.phase) if getattr(args, "phase", None) else None
    since = getattr(args, "since", None)
    until = getattr(args, "until", None)
    store = _store_path(args)
    if path is None and store is not None:
        return read_events(EventStore(store), phase=phase, start=since, end=until)
    events = list(parse_event_lines(_read_lines(ctx, path)))
    if phase is not None or since is not None or until is not None:
        events = [
            e
            for e in events
            if (phase is None or e.phase is phase)
            and (since is None or e.timestamp >= since)
            and (until is None or e.timestamp < until)
        ]
    return events


def _emit(ctx: _Ctx, args: argparse.Namespace, payload: dict[str, Any], rows: list[tuple[str, Any]]) -> None:
    if args.format == "machine":
        ctx.stdout.write(render_machine(payload))
    else:
        ctx.stdout.write(render_text(rows))


def _scenario_spec(args: argparse.Namespace) -> WorkloadSpec:
    if getattr(args, "spec", None):
        spec = load_spec(args.spec)
    elif getattr(args, "scenario", None):
        spec = builtin_scenario(args.scenario)
    else:
        raise UsageError("one of --scenario or --spec is required")
    overrides: dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "n", None) is not None:
        overrides["n_tasks"] = args.n
    return spec.with_overrides(**overrides) if overrides else spec


def _cost_model(args: argparse.Namespace) -> CostModel | None:
    if args.scenario:
        base = builtin_scenario(args.scenario).cost_model
    elif args.tau_a is not None or args.tau_h is not None:
        if args.tau_a is None or args.tau_h is None:
            raise UsageError("--tau-a and --tau-h must be given together")
        base = CostModel(args.tau_a, args.tau_h)
    else:
        return None
    return CostModel(
        base.tau_a if args.tau_a is None else args.tau_a,
        base.tau_h if args.tau_h is None else args.tau_h,
        base.gamma if args.gamma is None else args.gamma,
        base.tau_review_a if args.tau_review is None else args.tau_review,
    )


def _now_ms() -> int:
    return time.time_ns() // 1_000_000


def _history_advance(args: argparse.Namespace, result_for: Callable[[int], PhaseResult]) -> GateState | None:
    """Advance the persisted gate history, if one was given."""
    if not getattr(args, "history", None):
        return None
    log = GateHistoryLog(args.history)
    state = log.state()
    last = state.history[-1].timestamp if state.history else -1
    result = result_for(max(_now_ms(), last + 1))
    state = gate_advance(state, result)
    log.append(result)
    return state


# -- subcommands -------------------------------------------------------------


def cmd_ingest(ctx: _Ctx, args: argparse.Namespace) -> int:
    store = _store_path(args)
    if store is None:
        raise UsageError(f"ingest needs --store or ${STORE_ENV}")
    events: list[DecisionEvent] = []
    for path in args.files or [None]:
        events.extend(parse_event_lines(_read_lines(ctx, path)))
    receipt = EventStore(store).append(events, batch_key=args.batch_key)
    _emit(ctx, args, receipt.to_dict(), [(k, v) for k, v in receipt.to_dict().items()])
    return EXIT_OK


def cmd_alpha(ctx: _Ctx, args: argparse.Namespace) -> int:
    events = _load_events(ctx, args)
    if args.window is not None:
        if not events:
            raise EmptyLog("alpha is undefined for an empty log")
        series = compute_alpha_windowed(events, args.window, args.stride or args.window, by=args.by)
        payload = window_series_payload(series)
        rows = [(f"{start}", f"{est.alpha:.6g}  n={est.total_count}  ci95=[{est.ci_low:.4f}, {est.ci_high:.4f}]") for start, est in series]
        _emit(ctx, args, payload, [("window_start", "alpha")] + rows)
        return EXIT_OK
    est = compute_alpha(events)
    _emit(ctx, args, est.to_dict(), alpha_rows(est))
    return EXIT_OK


def cmd_regime(ctx: _Ctx, args: argparse.Namespace) -> int:
    if args.alpha is not None:
        rc = classify_regime(args.alpha, args.hisoai_threshold, args.ideal_floor)
        _emit(ctx, args, {"regime": rc.to_dict()}, regime_rows(rc) + [("alpha", rc.alpha)])
        return EXIT_OK
    est = compute_alpha(_load_events(ctx, args))
    rc = classify_regime(est.alpha, args.hisoai_threshold, args.ideal_floor)
    _emit(ctx, args, {"alpha": est.to_dict(), "regime": rc.to_dict()}, alpha_rows(est) + regime_rows(rc))
    return EXIT_OK


def cmd_cost(ctx: _Ctx, args: argparse.Namespace) -> int:
    model = _cost_model(args)
    if model is None:
        raise UsageError("cost needs --tau-a/--tau-h or --scenario")
    if args.alpha is not None:
        if args.n is None:
            raise UsageError("--alpha requires --n")
        alpha, n = args.alpha, args.n
    else:
        est = compute_alpha(_load_events(ctx, args))
        alpha, n = est.alpha, args.n or est.total_count
    cb = CostBreakdown(model, alpha, n)
    _emit(ctx, args, cb.to_dict(), cost_rows(cb) + [("alpha", alpha)])
    return EXIT_OK


def cmd_report(ctx: _Ctx, args: argparse.Namespace) -> int:
    events = _load_events(ctx, args)
    est = compute_alpha(events)
    rc = classify_regime(est.alpha, args.hisoai_threshold, args.ideal_floor)
    model = _cost_model(args)
    cb = CostBreakdown(model, est.alpha, est.total_count) if model is not None else None
    doc = ReportDocument(est, rc, cb, labor_report(events))
    _emit(ctx, args, doc.to_dict(), doc.rows())
    return EXIT_OK


def cmd_labor(ctx: _Ctx, args: argparse.Namespace) -> int:
    la = labor_report(_load_events(ctx, args))
    _emit(ctx, args, la.to_dict(), labor_rows(la))
    return EXIT_OK


def cmd_simulate(ctx: _Ctx, args: argparse.Namespace) -> int:
    spec = _scenario_spec(args)
    out = ctx.stdout
    if args.out:
        try:
            out = open(args.out, "w", encoding="utf-8", newline="\n")
        except OSError as exc:
            raise StoreIoError(f"cannot write {args.out}: {exc.strerror or exc}", path=args.out) from None
    try:
        if args.kind == "operational":
            write_events(simulate_operational(spec), out)
        elif args.kind == "offline":
            for p in simulate_offline(spec):
                out.write(render_machine(prediction_to_dict(p)))
        else:
            for p in simulate_shadow(spec):
                out.write(render_machine(pair_to_dict(p)))
    finally:
        if out is not ctx.stdout:
            out.close()
    return EXIT_OK


def _gate_config(args: argparse.Namespace, **kw: Any) -> GateConfig:
    return GateConfig(
        alpha_target=args.target,
        theta=getattr(args, "theta", None),
        hisoai_threshold=args.hisoai_threshold,
        ideal_floor=args.ideal_floor,
        **kw,
    )


def _verdict_out(ctx: _Ctx, args: argparse.Namespace, verdict: GateVerdict, state: GateState | None) -> int:
    payload: dict[str, Any] = {"verdict": verdict.to_dict()}
    rows = [("phase", verdict.phase.value), ("verdict", verdict.outcome.value)] + alpha_rows(verdict.measured_alpha)
    rows.append(("reason", verdict.reason))
    if state is not None:
        payload["gate"] = state.to_dict()
        rows += [("gate_phase", state.phase.value), ("reengineering_cycles", state.reengineering_cycles)]
    _emit(ctx, args, payload, rows)
    return EXIT_FLAG if verdict.flagged else EXIT_OK


def cmd_gate_offline(ctx: _Ctx, args: argparse.Namespace) -> int:
    if args.scenario or args.spec:
        preds = simulate_offline(_scenario_spec(args))
    else:
        preds = list(parse_prediction_lines(_read_lines(ctx, args.file)))
    _, verdict = offline_evaluate(preds, _gate_config(args))
    state = _history_advance(args, lambda ts: PhaseResult.from_verdict(verdict, ts))
    return _verdict_out(ctx, args, verdict, state)


def cmd_gate_shadow(ctx: _Ctx, args: argparse.Namespace) -> int:
    if args.scenario or args.spec:
        pairs = simulate_shadow(_scenario_spec(args))
    else:
        pairs = list(parse_pair_lines(_read_lines(ctx, args.file)))
    cfg = _gate_config(args, shadow_cycles=args.cycles or len(pairs) or 1)
    _, verdict = shadow_evaluate(pairs, cfg)
    state = _history_advance(args, lambda ts: PhaseResult.from_verdict(verdict, ts))
    return _verdict_out(ctx, args, verdict, state)


def cmd_gate_monitor(ctx: _Ctx, args: argparse.Namespace) -> int:
    cfg = _gate_config(
        args,
        monitor_window=args.window,
        monitor_stride=args.stride,
        monitor_by=args.by,
        consecutive_breaches=args.breaches,
    )
    if args.scenario or args.spec:
        events = simulate_operational(_scenario_spec(args))
    else:
        events = _load_events(ctx, args)
    series = compute_alpha_windowed(events, cfg.monitor_window, cfg.stride, by=cfg.monitor_by)
    trigger = steady_state_check(series, cfg)
    latest = series[-1][1] if series else None
    state = _history_advance(args, lambda ts: PhaseResult.from_monitor(trigger, ts, cfg, latest))
    payload: dict[str, Any] = {
        "outcome": Outcome.HISOAI_FLAG.value if trigger else Outcome.PASS.value,
        "trigger": None if trigger is None else trigger.to_dict(),
        "windows": len(series),
        "config": cfg.to_dict(),
    }
    rows: list[tuple[str, Any]] = [("windows", len(series))]
    if latest is not None:
        rows.append(("latest_alpha", latest.alpha))
    if trigger is None:
        rows.append(("verdict", "pass: no sustained breach"))
    else:
        rows += [
            ("verdict", Outcome.HISOAI_FLAG.value),
            ("breach_windows", f"{trigger.first_index}..{trigger.last_index}"),
            ("breach_alphas", " ".join(f"{a:.4f}" for a in trigger.alphas)),
            ("action", "trigger AI re-engineering/retraining"),
        ]
    if state is not None:
        payload["gate"] = state.to_dict()
        rows.append(("gate_phase", state.phase.value))
    _emit(ctx, args, payload, rows)
    return EXIT_FLAG if trigger else EXIT_OK


def cmd_gate_run(ctx: _Ctx, args: argparse.Namespace) -> int:
    """Offline then shadow evaluation on one scenario, stopping at the first flag."""
    spec = _scenario_spec(args)
    cfg = _gate_config(args, shadow_cycles=args.cycles or spec.n_tasks)
    log = GateHistoryLog(args.history) if args.history else None
    state = log.state() if log else GateState.initial()

    def step(verdict: GateVerdict) -> None:
        nonlocal state
        last = state.history[-1].timestamp if state.history else -1
        result = PhaseResult.from_verdict(verdict, max(_now_ms(), last + 1))
        state = gate_advance(state, result)
        if log:
            log.append(result)

    verdicts = []
    _, v = offline_evaluate(simulate_offline(spec), cfg)
    step(v)
    verdicts.append(v)
    if not v.flagged:
        shadow_spec = spec.with_overrides(n_tasks=cfg.shadow_cycles)
        _, v = shadow_evaluate(simulate_shadow(shadow_spec), cfg)
        step(v)
        verdicts.append(v)
    payload = {"verdicts": [x.to_dict() for x in verdicts], "gate": state.to_dict()}
    rows: list[tuple[str, Any]] = []
    for x in verdicts:
        rows += [(f"{x.phase.value}.alpha", x.measured_alpha.alpha), (f"{x.phase.value}.verdict", x.outcome.value)]
    rows += [("reason", verdicts[-1].reason), ("gate_phase", state.phase.value), ("reengineering_cycles", state.reengineering_cycles)]
    _emit(ctx, args, payload, rows)
    return EXIT_FLAG if verdicts[-1].flagged else EXIT_OK


def cmd_gate_resume(ctx: _Ctx, args: argparse.Namespace) -> int:
    state = _history_advance(args, lambda ts: PhaseResult.resume(ts))
    assert state is not None
    _emit(ctx, args, {"gate": state.to_dict()}, [("gate_phase", state.phase.value)])
    return EXIT_OK


def cmd_gate_status(ctx: _Ctx, args: argparse.Namespace) -> int:
    state = GateHistoryLog(args.history).state()
    rows: list[tuple[str, Any]] = [
        ("gate_phase", state.phase.value),
        ("reengineering_cycles", state.reengineering_cycles),
        ("transitions", len(state.history)),
    ]
    _emit(ctx, args, {"gate": state.to_dict()}, rows)
    return EXIT_OK


def cmd_serve(ctx: _Ctx, args: argparse.Namespace) -> int:
    import uvicorn

    from .monitor_service import ServiceConfig, create_app

    store = _store_path(args)
    if store is None:
        raise UsageError(f"serve needs --store or ${STORE_ENV}")
    cfg = ServiceConfig(
        gate=GateConfig(
            alpha_target=args.target,
            monitor_window=args.window,
            monitor_stride=args.stride,
            monitor_by=args.by,
            consecutive_breaches=args.breaches,
        ),
        store_path=store,
        history_path=args.history,
        host=args.host,
        port=args.port,
    )
    uvicorn.run(create_app(cfg), host=cfg.host, port=cfg.port, log_level="info")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "machine"), default="text")
    common.add_argument("--store", help=f"event store directory (default ${STORE_ENV})")

    events_in = _Parser(add_help=False)
    events_in.add_argument("file", nargs="?", help="event log (default: store if configured, else stdin)")
    events_in.add_argument("--phase", choices=[p.value for p in Phase])
    events_in.add_argument("--since", type=int, help="inclusive start, ms since epoch")
    events_in.add_argument("--until", type=int, help="exclusive end, ms since epoch")

    thresholds = _Parser(add_help=False)
    thresholds.add_argument("--hisoai-threshold", type=_fraction, default=DEFAULT_HISOAI_THRESHOLD)
    thresholds.add_argument("--ideal-floor", type=_fraction, default=DEFAULT_IDEAL_FLOOR)

    costs = _Parser(add_help=False)
    costs.add_argument("--tau-a", type=_nonneg)
    costs.add_argument("--tau-h", type=_nonneg)
    costs.add_argument("--gamma", type=_fraction)
    costs.add_argument("--tau-review", type=_nonneg)

    scen = _Parser(add_help=False)
    scen.add_argument("--scenario", help="built-in scenario name")
    scen.add_argument("--spec", help="workload spec JSON file")
    scen.add_argument("--seed", type=int)
    scen.add_argument("--n", type=_positive_int, help="override number of tasks")

    windows = _Parser(add_help=False)
    windows.add_argument("--stride", type=_positive_int)
    windows.add_argument("--by", choices=("count", "time"), default="count")

    parser = _Parser(prog="afhe-audit", description="Audit hybrid human/AI systems for hidden human dependency.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="append event logs to a store")
    p.add_argument("files", nargs="*")
    p.add_argument("--batch-key", help="idempotency key; a repeated key appends nothing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("alpha", parents=[common, events_in, windows], help="autonomy coefficient")
    p.add_argument("--window", type=_positive_int, help="windowed series (events or ms, see --by)")
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("regime", parents=[common, events_in, thresholds], help="classify the autonomy regime")
    p.add_argument("--alpha", type=_fraction, help="classify this value instead of a log")
    p.set_defaults(func=cmd_regime)

    p = sub.add_parser("cost", parents=[common, events_in, costs], help="total system cost")
    p.add_argument("--scenario", help="take cost parameters from a built-in scenario")
    p.add_argument("--alpha", type=_fraction)
    p.add_argument("--n", type=_positive_int)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("report", parents=[common, events_in, thresholds, costs], help="alpha, regime, cost and labor")
    p.add_argument("--scenario", help="take cost parameters from a built-in scenario")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("labor", parents=[common, events_in], help="human labor allocation by role")
    p.set_defaults(func=cmd_labor)

    p = sub.add_parser("simulate", parents=[common, scen], help="generate a synthetic workload")
    p.add_argument("--kind", choices=("operational", "offline", "shadow"), default="operational")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_simulate)

    gate = sub.add_parser("gate", help="deployment gate phases")
    gsub = gate.add_subparsers(dest="gate_command", required=True, parser_class=_Parser)
    hist = _Parser(add_help=False)
    hist.add_argument("--history", help="gate history file to validate against and append to")
    target = _Parser(add_help=False)
    target.add_argument("--target", type=_fraction, required=True, help="alpha_target")

    p = gsub.add_parser("offline", parents=[common, scen, thresholds, hist, target], help="phase I")
    p.add_argument("file", nargs="?", help="scored predictions (default stdin)")
    p.add_argument("--theta", type=_fraction, required=True, help="confidence threshold (strict >)")
    p.set_defaults(func=cmd_gate_offline)

    p = gsub.add_parser("shadow", parents=[common, scen, thresholds, hist, target], help="phase II")
    p.add_argument("file", nargs="?", help="paired decisions (default stdin)")
    p.add_argument("--cycles", type=_positive_int, help="expected pair count M")
    p.set_defaults(func=cmd_gate_shadow)

    p = gsub.add_parser("monitor", parents=[common, events_in, scen, windows, thresholds, hist, target], help="steady state")
    p.add_argument("--window", type=_positive_int, required=True)
    p.add_argument("--breaches", type=_positive_int, default=3, help="consecutive breaching windows to trigger")
    p.set_defaults(func=cmd_gate_monitor)

    p = gsub.add_parser("run", parents=[common, scen, thresholds, hist, target], help="phase I then II on a scenario")
    p.add_argument("--theta", type=_fraction, required=True)
    p.add_argument("--cycles", type=_positive_int, help="shadow cycles M (default n_tasks)")
    p.set_defaults(func=cmd_gate_run)

    p = gsub.add_parser("resume", parents=[common], help="leave re-engineering, back to offline evaluation")
    p.add_argument("--history", required=True)
    p.set_defaults(func=cmd_gate_resume)

    p = gsub.add_parser("status", parents=[common], help="replay a gate history")
    p.add_argument("--history", required=True)
    p.set_defaults(func=cmd_gate_status)

    p = sub.add_parser("serve", parents=[common, windows], help="run the steady-state monitor service")
    p.add_argument("--history", help="gate history (default <store>/gate_history.ndjson)")
    p.add_argument("--target", type=_fraction, required=True)
    p.add_argument("--window", type=_positive_int, default=1000)
    p.add_argument("--breaches", type=_positive_int, default=3)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def run_cli(
    argv: Sequence[str],
    stdin: IO[str] | None = None,
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
) -> int:
    ctx = _Ctx(stdin or sys.stdin, stdout or sys.stdout, stderr or sys.stderr)
    try:
        args = build_parser().parse_args(list(argv))
        return args.func(ctx, args)
    except AuditError as exc:
        ctx.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return EXIT_ERROR
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
