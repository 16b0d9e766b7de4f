"""Decision-event wire format and an append-only segmented event store.

Wire format: UTF-8, LF-terminated, one JSON object per line, keys sorted
alphabetically, compact separators. Optional fields that are unset are
omitted; ``reviewed_async`` is always written. Unknown keys ride along in
``DecisionEvent.extra`` and are written back untouched.

Store layout::

    <dir>/manifest.json      current view; replaced atomically
    <dir>/seg-000001.ndjson  segment files, append-only

A segment's visible content is exactly the first ``bytes`` bytes recorded in
the manifest. Appends write to the active segment, fsync, then swap in a new
manifest with ``os.replace``. A crash between the two leaves trailing bytes
no reader will look at; the next writer truncates them before appending.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .core_metrics import Decider, DecisionEvent, LaborRole, Phase
from .errors import (
    CorruptSegment,
    InvalidEnum,
    InvalidEvent,
    InvalidField,
    MissingField,
    ParseError,
    RecordSyntaxError,
    StoreIoError,
)

FORMAT_VERSION = 1
SEGMENT_MAX_RECORDS = 100_000
MANIFEST_NAME = "manifest.json"
BATCH_KEY_HORIZON = 10_000

REQUIRED_KEYS = ("task_id", "timestamp", "decider", "phase")
KNOWN_KEYS = frozenset(
    REQUIRED_KEYS
    + ("ai_confidence", "ai_decision", "human_decision", "reviewed_async", "human_role")
)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _enum(cls: type, key: str, value: Any, line: int | None) -> Any:
    try:
        return cls(value)
    except ValueError:
        raise InvalidEnum(key, value, [m.value for m in cls], line=line) from None


def event_from_dict(obj: Mapping[str, Any], line: int | None = None) -> DecisionEvent:
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise MissingField(key, line=line)

    task_id = obj["task_id"]
    if not isinstance(task_id, str):
        raise InvalidField("task_id", "must be a string", line=line)
    ts = obj["timestamp"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise InvalidField("timestamp", "must be a non-negative integer (ms since epoch)", line=line)
    decider = _enum(Decider, "decider", obj["decider"], line)
    phase = _enum(Phase, "phase", obj["phase"], line)

    conf = obj.get("ai_confidence")
    if conf is not None:
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise InvalidField("ai_confidence", "must be a number in [0, 1]", line=line)
        conf = float(conf)
    for key in ("ai_decision", "human_decision"):
        if obj.get(key) is not None and not isinstance(obj[key], str):
            raise InvalidField(key, "must be a string", line=line)
    reviewed = obj.get("reviewed_async", False)
    if not isinstance(reviewed, bool):
        raise InvalidField("reviewed_async", "must be a boolean", line=line)
    role = obj.get("human_role")
    if role is not None:
        role = _enum(LaborRole, "human_role", role, line)

    extra = {k: v for k, v in obj.items() if k not in KNOWN_KEYS}
    try:
        return DecisionEvent(
            task_id=task_id,
            timestamp=ts,
            decider=decider,
            phase=phase,
            ai_confidence=conf,
            ai_decision=obj.get("ai_decision"),
            human_decision=obj.get("human_decision"),
            reviewed_async=reviewed,
            human_role=role,
            extra=extra,
        )
    except InvalidEvent as exc:
        raise InvalidField(exc.detail.get("key", "record"), exc.message, line=line) from None


def event_to_dict(ev: DecisionEvent) -> dict[str, Any]:
    out: dict[str, Any] = dict(ev.extra)
    out["task_id"] = ev.task_id
    out["timestamp"] = ev.timestamp
    out["decider"] = ev.decider.value
    out["phase"] = ev.phase.value
    out["reviewed_async"] = ev.reviewed_async
    if ev.ai_confidence is not None:
        out["ai_confidence"] = ev.ai_confidence
    if ev.ai_decision is not None:
        out["ai_decision"] = ev.ai_decision
    if ev.human_decision is not None:
        out["human_decision"] = ev.human_decision
    if ev.human_role is not None:
        out["human_role"] = ev.human_role.value
    return out


def parse_json_line(line: str, line_no: int | None = None) -> dict[str, Any]:
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except (json.JSONDecodeError, ValueError) as exc:
        raise RecordSyntaxError(f"malformed record: {exc}", line=line_no) from None
    if not isinstance(obj, dict):
        raise RecordSyntaxError("record must be a JSON object", line=line_no)
    return obj


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name} not allowed")


def parse_event_line(line: str, line_no: int | None = None) -> DecisionEvent:
    return event_from_dict(parse_json_line(line, line_no), line_no)


def serialize_event(ev: DecisionEvent) -> str:
    """Canonical single-line rendering, without the trailing newline."""
    return canonical_json(event_to_dict(ev))


def parse_event_lines(lines: Iterable[str]) -> Iterator[DecisionEvent]:
    """Parse a line-delimited log; blank lines are skipped, errors carry 1-based line numbers."""
    for n, line in enumerate(lines, 1):
        if line.strip():
            yield parse_event_line(line, n)


def parse_lines_lenient(lines: Iterable[str]) -> tuple[list[DecisionEvent], list[ParseError]]:
    events: list[DecisionEvent] = []
    errors: list[ParseError] = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            events.append(parse_event_line(line, n))
        except ParseError as exc:
            errors.append(exc)
    return events, errors


def write_events(events: Iterable[DecisionEvent], fh: Any) -> int:
    n = 0
    for ev in events:
        fh.write(serialize_event(ev) + "\n")
        n += 1
    return n


@dataclass(frozen=True)
class SegmentInfo:
    name: str
    count: int
    bytes: int
    min_ts: int | None
    max_ts: int | None
    sealed: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "count": self.count,
            "bytes": self.bytes,
            "min_ts": self.min_ts,
            "max_ts": self.max_ts,
            "sealed": self.sealed,
        }


@dataclass(frozen=True)
class Manifest:
    version: int = 0
    segments: tuple[SegmentInfo, ...] = ()
    batch_keys: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return sum(s.count for s in self.segments)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "version": self.version,
            "segments": [s.to_dict() for s in self.segments],
            "batch_keys": list(self.batch_keys),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Manifest:
        if d.get("format_version") != FORMAT_VERSION:
            raise CorruptSegment(f"unsupported manifest format_version {d.get('format_version')!r}", segment=MANIFEST_NAME)
        return cls(
            version=int(d["version"]),
            segments=tuple(SegmentInfo(**s) for s in d["segments"]),
            batch_keys=tuple(d.get("batch_keys", ())),
        )


@dataclass(frozen=True)
class AppendReceipt:
    count: int
    manifest_version: int
    duplicate: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"count": self.count, "manifest_version": self.manifest_version, "duplicate": self.duplicate}


@dataclass(frozen=True)
class EventFilter:
    phase: Phase | None = None
    decider: Decider | None = None
    start: int | None = None  # inclusive, ms
    end: int | None = None  # exclusive, ms

    def __call__(self, ev: DecisionEvent) -> bool:
        if self.phase is not None and ev.phase is not self.phase:
            return False
        if self.decider is not None and ev.decider is not self.decider:
            return False
        if self.start is not None and ev.timestamp < self.start:
            return False
        if self.end is not None and ev.timestamp >= self.end:
            return False
        return True


class EventStore:
    """Directory-backed append-only store.

    One writer per store; any number of readers. Readers only ever see the
    manifest they loaded, so a concurrent append is either fully visible or
    not at all.
    """

    def __init__(self, root: str | os.PathLike[str], segment_max_records: int = SEGMENT_MAX_RECORDS) -> None:
        self.root = Path(root)
        self.segment_max_records = segment_max_records
        self._lock = threading.Lock()
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreIoError(f"cannot create store {self.root}: {exc}", path=str(self.root)) from exc

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def manifest(self) -> Manifest:
        try:
            raw = self.manifest_path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return Manifest()
        except OSError as exc:
            raise StoreIoError(f"cannot read manifest: {exc}", path=str(self.manifest_path)) from exc
        try:
            return Manifest.from_dict(json.loads(raw))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptSegment(f"manifest unreadable: {exc}", segment=MANIFEST_NAME) from None

    def _write_manifest(self, manifest: Manifest) -> None:
        tmp = self.root / (MANIFEST_NAME + ".tmp")
        with tmp.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical_json(manifest.to_dict()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.manifest_path)
        _fsync_dir(self.root)

    def _segment_name(self, index: int) -> str:
        return f"seg-{index:06d}.ndjson"

    def append(self, events: Sequence[DecisionEvent], batch_key: str | None = None) -> AppendReceipt:
        with self._lock:
            current = self.manifest()
            if batch_key is not None and batch_key in current.batch_keys:
                return AppendReceipt(0, current.version, duplicate=True)
            if not events:
                return AppendReceipt(0, current.version)
            try:
                segments = self._write_segments(list(current.segments), events)
                keys = current.batch_keys
                if batch_key is not None:
                    keys = (keys + (batch_key,))[-BATCH_KEY_HORIZON:]
                new = Manifest(current.version + 1, tuple(segments), keys)
                self._write_manifest(new)
            except OSError as exc:
                raise StoreIoError(f"append failed, manifest unchanged: {exc}", path=str(self.root)) from exc
            return AppendReceipt(len(events), new.version)

    def _write_segments(self, segments: list[SegmentInfo], events: Sequence[DecisionEvent]) -> list[SegmentInfo]:
        pending = list(events)
        while pending:
            if not segments or segments[-1].sealed:
                segments.append(SegmentInfo(self._segment_name(len(segments) + 1), 0, 0, None, None))
            seg = segments[-1]
            room = self.segment_max_records - seg.count
            chunk, pending = pending[:room], pending[room:]
            data = "".join(serialize_event(ev) + "\n" for ev in chunk).encode("utf-8")
            path = self.root / seg.name
            with open(path, "ab") as fh:
                # drop any torn tail from an earlier failed append
                fh.truncate(seg.bytes)
                fh.seek(seg.bytes)
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            ts = [ev.timestamp for ev in chunk]
            lo = min(ts) if seg.min_ts is None else min(seg.min_ts, *ts)
            hi = max(ts) if seg.max_ts is None else max(seg.max_ts, *ts)
            count = seg.count + len(chunk)
            segments[-1] = SegmentInfo(seg.name, count, seg.bytes + len(data), lo, hi, count >= self.segment_max_records)
        return segments

    def seal(self) -> int:
        """Seal the active segment; returns the manifest version."""
        with self._lock:
            current = self.manifest()
            if not current.segments or current.segments[-1].sealed:
                return current.version
            segs = list(current.segments)
            last = segs[-1]
            segs[-1] = SegmentInfo(last.name, last.count, last.bytes, last.min_ts, last.max_ts, True)
            new = Manifest(current.version + 1, tuple(segs), current.batch_keys)
            try:
                self._write_manifest(new)
            except OSError as exc:
                raise StoreIoError(f"seal failed: {exc}", path=str(self.root)) from exc
            return new.version

    def _read_segment(self, seg: SegmentInfo) -> list[DecisionEvent]:
        path = self.root / seg.name
        try:
            with open(path, "rb") as fh:
                raw = fh.read(seg.bytes)
        except OSError as exc:
            raise CorruptSegment(f"segment {seg.name} unreadable: {exc}", segment=seg.name) from None
        if len(raw) != seg.bytes:
            raise CorruptSegment(f"segment {seg.name} is shorter than its manifest entry", segment=seg.name)
        try:
            text = raw.decode("utf-8")
            events = [parse_event_line(line, n) for n, line in enumerate(text.splitlines(), 1)]
        except (UnicodeDecodeError, ParseError) as exc:
            raise CorruptSegment(f"segment {seg.name}: {exc}", segment=seg.name) from None
        if len(events) != seg.count:
            raise CorruptSegment(
                f"segment {seg.name} holds {len(events)} records, manifest says {seg.count}", segment=seg.name
            )
        return events

    def read(self, flt: EventFilter | None = None) -> list[DecisionEvent]:
        manifest = self.manifest()
        out: list[DecisionEvent] = []
        for seg in manifest.segments:
            if flt is not None and seg.count and not _may_overlap(seg, flt):
                continue
            evs = self._read_segment(seg)
            out.extend(evs if flt is None else (e for e in evs if flt(e)))
        # stable: equal timestamps keep append order
        out.sort(key=lambda e: e.timestamp)
        return out


def _may_overlap(seg: SegmentInfo, flt: EventFilter) -> bool:
    if seg.min_ts is None or seg.max_ts is None:
        return True
    if flt.start is not None and seg.max_ts < flt.start:
        return False
    if flt.end is not None and seg.min_ts >= flt.end:
        return False
    return True


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def append_events(store: EventStore, events: Sequence[DecisionEvent], batch_key: str | None = None) -> AppendReceipt:
    return store.append(events, batch_key=batch_key)


def read_events(
    store: EventStore,
    phase: Phase | None = None,
    start: int | None = None,
    end: int | None = None,
    decider: Decider | None = None,
) -> list[DecisionEvent]:
    if phase is None and start is None and end is None and decider is None:
        return store.read()
    return store.read(EventFilter(phase=phase, decider=decider, start=start, end=end))

