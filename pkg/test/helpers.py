"""Builders shared by the test modules"""

from typing import Iterable, Optional, Sequence, Tuple

from libtailsampler.trace_encoder import EncodedTrace, EventPairSet
from libtailsampler.trace_model import (EndpointKey, LogEvent, LogLevel, Span, SpanStatus, Trace,
                                        assemble_trace)

MS = 1_000_000
SEC = 1_000_000_000


def span(trace_id: str, span_id: str, parent: Optional[str] = None,
         service: str = "svc-a", operation: str = "op",
         start: int = 0, duration: int = 10 * MS,
         status: SpanStatus = SpanStatus.OK, logs: Sequence[LogEvent] = ()) -> Span:
    return Span(trace_id, span_id, parent, service, operation, start, duration, status, tuple(logs))


def tlog(ts: int, level: str, template_id: int) -> LogEvent:
    return LogEvent(ts, LogLevel(level), template_id=template_id)


def make_trace(trace_id: str,
               start: int = 0,
               root: Tuple[str, str] = ("svc-a", "op"),
               children: Iterable[Tuple[str, str]] = (),
               duration: int = 100 * MS,
               root_status: SpanStatus = SpanStatus.OK,
               root_logs: Sequence[LogEvent] = ()) -> Trace:
    """Root span plus one level of children, each child a leaf"""
    spans = [span(trace_id, "root", None, root[0], root[1], start, duration, root_status, root_logs)]
    for i, (service, operation) in enumerate(children):
        spans.append(span(trace_id, f"c{i}", "root", service, operation,
                          start + (i + 1) * MS, duration // 4))
    return assemble_trace(spans)


def encoded(trace_id: str,
            service: str = "svc-a",
            arrival: int = 0,
            anomaly: float = 0.0,
            pairs: Iterable[Tuple[int, int]] = ((1, 2),),
            operation: str = "op",
            duration: int = 100 * MS) -> EncodedTrace:
    return EncodedTrace(trace_id, EndpointKey(service, operation), EventPairSet.from_pairs(pairs),
                        anomaly, duration, arrival)
