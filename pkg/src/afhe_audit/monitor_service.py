"""HTTP service for steady-state monitoring of a deployed system.

The service owns transport and persistence only. Windowing is
``compute_alpha_windowed``, breach detection is ``steady_state_check`` and
phase changes go through ``gate_advance``; nothing here adds its own rule.

Endpoints::

    POST /v1/events          line-delimited event records; Idempotency-Key header
    GET  /v1/alpha?windows=k latest k windows of operational alpha
    GET  /v1/gate            gate state plus the active alert, if any
    GET  /v1/healthz         liveness
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from fastapi import FastAPI, Query, Request
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool

from .core_metrics import AlphaEstimate, DecisionEvent, Phase, compute_alpha_windowed
from .errors import AuditError, ConfigError, RecordSyntaxError, StoreIoError
from .event_ingest import EventFilter, EventStore, parse_lines_lenient
from .gate_engine import (
    GateConfig,
    GateHistoryLog,
    GatePhase,
    GateState,
    PhaseResult,
    ReengineeringTrigger,
    gate_advance,
    steady_state_check,
)
from .reports import render_machine, window_series_payload

logger = logging.getLogger(__name__)

IDEMPOTENCY_HEADER = "Idempotency-Key"
HISTORY_NAME = "gate_history.ndjson"


@dataclass(frozen=True)
class ServiceConfig:
    gate: GateConfig
    store_path: str | os.PathLike[str]
    history_path: str | os.PathLike[str] | None = None
    host: str = "127.0.0.1"
    port: int = 8000

    @property
    def resolved_history(self) -> Path:
        return Path(self.history_path) if self.history_path else Path(self.store_path) / HISTORY_NAME


@dataclass(frozen=True)
class AlertRecord:
    trigger_time: int
    first_window_start: int
    last_window_start: int
    alphas: tuple[float, ...]
    config: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "trigger_time": self.trigger_time,
            "window_range": [self.first_window_start, self.last_window_start],
            "alphas": list(self.alphas),
            "config": self.config,
        }


@dataclass(frozen=True)
class Snapshot:
    series: tuple[tuple[int, AlphaEstimate], ...]
    state: GateState
    alert: AlertRecord | None
    store_version: int


def _run_end_time(events: Sequence[DecisionEvent], trigger: ReengineeringTrigger, cfg: GateConfig) -> int:
    """Timestamp of the newest event inside the last breaching window."""
    start = trigger.window_starts[-1]
    if cfg.monitor_by == "count":
        return events[min(start + cfg.monitor_window, len(events)) - 1].timestamp
    end = start + cfg.monitor_window
    return max(e.timestamp for e in events if start <= e.timestamp < end)


class MonitorService:
    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.store = EventStore(config.store_path)
        self.history = GateHistoryLog(config.resolved_history)
        state = self.history.state()
        if state.phase not in (GatePhase.DEPLOYED, GatePhase.REENGINEERING):
            raise ConfigError(
                f"gate history at {self.history.path} is in phase {state.phase.value}; "
                "monitoring needs a deployed system (offline and shadow passes recorded)"
            )
        self._write_lock = threading.Lock()
        self._events = self.store.read(EventFilter(phase=Phase.OPERATIONAL))
        self._snapshot = self._evaluate(state, self.store.manifest().version)

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def _evaluate(self, state: GateState, version: int) -> Snapshot:
        cfg = self.config.gate
        series = compute_alpha_windowed(self._events, cfg.monitor_window, cfg.stride, by=cfg.monitor_by)
        trigger = steady_state_check(series, cfg)
        alert = None
        if trigger is not None:
            when = _run_end_time(self._events, trigger, cfg)
            alert = AlertRecord(when, trigger.window_starts[0], trigger.window_starts[-1], trigger.alphas, cfg.to_dict())
            if state.phase is GatePhase.DEPLOYED:
                last = state.history[-1].timestamp if state.history else -1
                result = PhaseResult.from_monitor(trigger, max(when, last + 1), cfg, series[-1][1])
                state = gate_advance(state, result)
                self.history.append(result)
                logger.warning("re-engineering triggered: %s", result.reason)
        return Snapshot(tuple(series), state, alert, version)

    def ingest(self, body: bytes, batch_key: str | None) -> tuple[int, dict[str, Any]]:
        try:
            text = body.decode("utf-8")
        except UnicodeDecodeError as exc:
            return 400, {"error": "SyntaxError", "message": f"body is not UTF-8: {exc}"}
        events, errors = parse_lines_lenient(text.splitlines())
        rejected = [e.to_dict() for e in errors]
        if not events and errors and all(isinstance(e, RecordSyntaxError) for e in errors):
            return 400, {"error": "SyntaxError", "message": "no line in the body parses", "rejected": rejected}

        with self._write_lock:
            try:
                receipt = self.store.append(events, batch_key=batch_key)
            except StoreIoError as exc:
                return 500, exc.to_dict()
            if receipt.count:
                ops = [e for e in events if e.phase is Phase.OPERATIONAL]
                if ops:
                    # stable sort of (sorted old + new) equals the store's read order
                    self._events = sorted(self._events + ops, key=lambda e: e.timestamp)
                try:
                    self._snapshot = self._evaluate(self._snapshot.state, receipt.manifest_version)
                except AuditError as exc:
                    # the events are durable; only the gate bookkeeping failed
                    logger.error("evaluation after append failed: %s", exc)
                    return 500, exc.to_dict()
        payload: dict[str, Any] = {
            "accepted": receipt.count,
            "rejected": rejected,
            "duplicate": receipt.duplicate,
            "manifest_version": receipt.manifest_version,
        }
        if receipt.duplicate:
            payload["note"] = f"batch key {batch_key!r} already applied; nothing appended"
        return 200, payload

    def alpha_payload(self, windows: int | None = None) -> dict[str, Any]:
        series = self._snapshot.series
        if windows is not None:
            series = series[-windows:]
        return window_series_payload(series)

    def gate_payload(self) -> dict[str, Any]:
        snap = self._snapshot
        return {
            "gate": snap.state.to_dict(),
            "alert": None if snap.alert is None else snap.alert.to_dict(),
            "store_version": snap.store_version,
        }


def _machine(payload: Any, status: int = 200) -> Response:
    return Response(render_machine(payload), status_code=status, media_type="application/json")


def create_app(config: ServiceConfig) -> FastAPI:
    service = MonitorService(config)
    app = FastAPI(title="afhe-audit monitor")
    app.state.service = service

    @app.post("/v1/events")
    async def post_events(request: Request) -> Response:
        body = await request.body()
        status, payload = await run_in_threadpool(service.ingest, body, request.headers.get(IDEMPOTENCY_HEADER))
        return _machine(payload, status)

    @app.get("/v1/alpha")
    def get_alpha(windows: int | None = Query(default=None, ge=1)) -> Response:
        return _machine(service.alpha_payload(windows))

    @app.get("/v1/gate")
    def get_gate() -> Response:
        return _machine(service.gate_payload())

    @app.get("/v1/healthz")
    def healthz() -> Response:
        return _machine({"status": "ok"})

    return app
