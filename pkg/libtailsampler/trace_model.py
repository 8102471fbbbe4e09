#!/usr/bin/env python3
"""
Trace data model

Spans, their correlated log events and the assembled Trace, plus the JSONL
span codec used on ingestion and for full-trace passthrough.

Span record format (one span per line, unknown keys ignored):
    {"trace_id", "span_id", "parent_span_id", "service", "operation",
     "start_ns", "duration_ns", "status", "logs": [{"ts_ns", "level",
     "message" | "template_id"}]}
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .errors import DuplicateSpanId, MalformedRecord, MixedTraceIds, TailSamplerError
from .jsonl_io import decode_line

logger = logging.getLogger(__name__)


class LogLevel(str, Enum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARN = "WARN"
    ERROR = "ERROR"


class SpanStatus(str, Enum):
    OK = "OK"
    ERROR = "ERROR"


@dataclass(frozen=True)
class LogEvent:
    """One log line attached to a span; either raw text or a template id"""
    timestamp: int
    level: LogLevel
    message: Optional[str] = None
    template_id: Optional[int] = None

    def __post_init__(self):
        if (self.message is None) == (self.template_id is None):
            raise ValueError("LogEvent needs exactly one of message / template_id")
        if self.timestamp < 0:
            raise ValueError(f"LogEvent timestamp must be >= 0, got {self.timestamp}")
        if self.template_id is not None and self.template_id < 0:
            raise ValueError(f"template_id must be >= 0, got {self.template_id}")


@dataclass(frozen=True)
class Span:
    trace_id: str
    span_id: str
    parent_span_id: Optional[str]
    service: str
    operation: str
    start: int
    duration: int
    status: SpanStatus = SpanStatus.OK
    logs: Tuple[LogEvent, ...] = ()

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"Span {self.span_id} has negative duration {self.duration}")

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def endpoint_label(self) -> str:
        """service/operation key used for span event ids"""
        return f"{self.service}/{self.operation}"


@dataclass(frozen=True, order=True)
class EndpointKey:
    """Identity of a root-span group: the entry point API"""
    service: str
    operation: str

    def __post_init__(self):
        if not self.service or not self.operation:
            raise ValueError("EndpointKey needs non-empty service and operation")

    def __str__(self) -> str:
        return f"{self.service}/{self.operation}"

    def to_dict(self) -> Dict[str, str]:
        return {"service": self.service, "operation": self.operation}


@dataclass(frozen=True)
class Trace:
    trace_id: str
    spans: Tuple[Span, ...]
    root_index: int
    orphan_indices: Tuple[int, ...] = ()

    @property
    def root(self) -> Span:
        return self.spans[self.root_index]

    @cached_property
    def parent_indices(self) -> Tuple[Optional[int], ...]:
        """Index of each span's resolvable parent, None for roots and orphans"""
        by_id = {s.span_id: i for i, s in enumerate(self.spans)}
        parents = []
        for i, span in enumerate(self.spans):
            p = by_id.get(span.parent_span_id) if span.parent_span_id is not None else None
            parents.append(p if p != i else None)
        return tuple(parents)

    @cached_property
    def children(self) -> Dict[int, List[int]]:
        """Resolvable children per span index, in span order"""
        kids: Dict[int, List[int]] = {}
        for i, p in enumerate(self.parent_indices):
            if p is not None:
                kids.setdefault(p, []).append(i)
        return kids

    def parent_child_pairs(self) -> List[Tuple[int, int]]:
        return [(p, i) for i, p in enumerate(self.parent_indices) if p is not None]

    @property
    def arrival(self) -> int:
        """Request arrival time: earliest span start"""
        return min(s.start for s in self.spans)

    @property
    def end_to_end_duration(self) -> int:
        return self.root.duration


@dataclass
class ParsedStream:
    """Traces assembled from a span stream plus the problems found on the way"""
    traces: List[Trace] = field(default_factory=list)
    diagnostics: List[TailSamplerError] = field(default_factory=list)

    @property
    def first_error(self) -> Optional[TailSamplerError]:
        return self.diagnostics[0] if self.diagnostics else None


# =========================================================================
# Record codec
# =========================================================================

def _require(record: Dict[str, Any], key: str, kind, line_no: int):
    if key not in record:
        raise MalformedRecord(line_no, f"missing key '{key}'")
    value = record[key]
    # bool is an int subclass; reject it for integer fields
    if kind is int and isinstance(value, bool):
        raise MalformedRecord(line_no, f"'{key}' must be an integer")
    if not isinstance(value, kind):
        raise MalformedRecord(line_no, f"'{key}' has wrong type {type(value).__name__}")
    return value


def _log_from_record(raw: Any, line_no: int) -> LogEvent:
    if not isinstance(raw, dict):
        raise MalformedRecord(line_no, "log entry is not an object")
    ts = _require(raw, "ts_ns", int, line_no)
    level_raw = _require(raw, "level", str, line_no)
    try:
        level = LogLevel(level_raw)
    except ValueError:
        raise MalformedRecord(line_no, f"unknown log level '{level_raw}'")
    has_msg = "message" in raw
    has_tid = "template_id" in raw
    if has_msg == has_tid:
        raise MalformedRecord(line_no, "log entry needs exactly one of message / template_id")
    try:
        if has_msg:
            return LogEvent(ts, level, message=_require(raw, "message", str, line_no))
        return LogEvent(ts, level, template_id=_require(raw, "template_id", int, line_no))
    except ValueError as e:
        raise MalformedRecord(line_no, str(e))


def span_from_record(record: Any, line_no: int = 0) -> Span:
    """
    Build a Span from one decoded JSONL object

    Raises:
        MalformedRecord: on missing keys, wrong types or invalid values
    """
    if not isinstance(record, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    trace_id = _require(record, "trace_id", str, line_no)
    span_id = _require(record, "span_id", str, line_no)
    parent = record.get("parent_span_id")
    if parent is not None and not isinstance(parent, str):
        raise MalformedRecord(line_no, "'parent_span_id' must be a string or null")
    service = _require(record, "service", str, line_no)
    operation = _require(record, "operation", str, line_no)
    start = _require(record, "start_ns", int, line_no)
    duration = _require(record, "duration_ns", int, line_no)
    status_raw = _require(record, "status", str, line_no)
    try:
        status = SpanStatus(status_raw)
    except ValueError:
        raise MalformedRecord(line_no, f"unknown status '{status_raw}'")
    logs_raw = record.get("logs", [])
    if not isinstance(logs_raw, list):
        raise MalformedRecord(line_no, "'logs' must be a list")
    logs = tuple(_log_from_record(entry, line_no) for entry in logs_raw)
    if not trace_id or not span_id or not service or not operation:
        raise MalformedRecord(line_no, "empty identifier field")
    if duration < 0:
        raise MalformedRecord(line_no, f"negative duration_ns {duration}")
    return Span(trace_id, span_id, parent, service, operation, start, duration, status, logs)


def log_to_record(log: LogEvent) -> Dict[str, Any]:
    record: Dict[str, Any] = {"ts_ns": log.timestamp, "level": log.level.value}
    if log.message is not None:
        record["message"] = log.message
    else:
        record["template_id"] = log.template_id
    return record


def span_to_record(span: Span) -> Dict[str, Any]:
    return {
        "trace_id": span.trace_id,
        "span_id": span.span_id,
        "parent_span_id": span.parent_span_id,
        "service": span.service,
        "operation": span.operation,
        "start_ns": span.start,
        "duration_ns": span.duration,
        "status": span.status.value,
        "logs": [log_to_record(log) for log in span.logs],
    }


def trace_to_records(trace: Trace) -> List[Dict[str, Any]]:
    return [span_to_record(s) for s in trace.spans]


# =========================================================================
# Assembly
# =========================================================================

def _start_key(spans: List[Span], i: int) -> Tuple[int, str]:
    return (spans[i].start, spans[i].span_id)


def assemble_trace(spans: List[Span]) -> Trace:
    """
    Assemble one trace from its spans

    Root rule: the parentless span (earliest start, then smallest span_id,
    when several); failing that the earliest-starting orphan; failing that
    (parent cycle) the earliest-starting span.

    Raises:
        ValueError: empty span list
        MixedTraceIds: spans from more than one trace
        DuplicateSpanId: span_id repeated within the trace
    """
    if not spans:
        raise ValueError("assemble_trace needs at least one span")
    trace_id = spans[0].trace_id
    seen = set()
    for span in spans:
        if span.trace_id != trace_id:
            raise MixedTraceIds(f"Spans from traces {trace_id} and {span.trace_id} mixed")
        if span.span_id in seen:
            raise DuplicateSpanId(trace_id, span.span_id)
        seen.add(span.span_id)

    ordered = [
        s if _logs_sorted(s.logs) else _with_sorted_logs(s)
        for s in spans
    ]

    parentless = [i for i, s in enumerate(ordered) if s.parent_span_id is None]
    orphans = [i for i, s in enumerate(ordered)
               if s.parent_span_id is not None and s.parent_span_id not in seen]

    if parentless:
        root = min(parentless, key=lambda i: _start_key(ordered, i))
    elif orphans:
        root = min(orphans, key=lambda i: _start_key(ordered, i))
    else:
        root = min(range(len(ordered)), key=lambda i: _start_key(ordered, i))
        logger.warning(f"Trace {trace_id} has no parentless span or orphan; rooted at earliest span")

    return Trace(trace_id, tuple(ordered), root, tuple(orphans))


def _logs_sorted(logs: Tuple[LogEvent, ...]) -> bool:
    return all(logs[i].timestamp <= logs[i + 1].timestamp for i in range(len(logs) - 1))


def _with_sorted_logs(span: Span) -> Span:
    logs = tuple(sorted(span.logs, key=lambda log: log.timestamp))
    return Span(span.trace_id, span.span_id, span.parent_span_id, span.service,
                span.operation, span.start, span.duration, span.status, logs)


def root_endpoint(trace: Trace) -> EndpointKey:
    root = trace.root
    return EndpointKey(root.service, root.operation)


def parse_trace_stream(lines: Iterable[Union[str, bytes]], source: Optional[str] = None) -> ParsedStream:
    """
    Parse span JSONL lines into assembled traces

    Spans are grouped by trace_id in first-encounter order. Bad lines and
    rejected traces land in the diagnostics list instead of raising.
    """
    result = ParsedStream()
    groups: Dict[str, List[Span]] = {}
    for line_no, line in enumerate(lines, start=1):
        try:
            text = decode_line(line, line_no, source).strip()
            if not text:
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise MalformedRecord(line_no, f"invalid JSON ({e.msg})", source)
            span = span_from_record(record, line_no)
        except MalformedRecord as e:
            if e.source is None and source is not None:
                e = MalformedRecord(e.line_no, e.reason, source)
            logger.warning(str(e))
            result.diagnostics.append(e)
            continue
        groups.setdefault(span.trace_id, []).append(span)

    for trace_id, spans in groups.items():
        try:
            result.traces.append(assemble_trace(spans))
        except DuplicateSpanId as e:
            logger.warning(f"Rejecting trace: {e}")
            result.diagnostics.append(e)
    return result
