#!/usr/bin/env python3
"""
Trace Encoder

Turns an assembled Trace into an event-pair set (EPS) and an anomaly score.

Per span the canonical event sequence is
    [SPAN_START, LOG..., STATUS_ERROR?, PERF_DEG?, SPAN_END]
and its bi-grams go into the set; every resolvable parent/child link adds
(end_parent, start_child). Parallel duplicates collapse because it is a set.

Anomaly score:
    sum over spans of  w_err*[status=ERROR] + w_lw*|WARN logs| + w_le*|ERROR logs|
    + perf_score when root duration > perf_factor * p90 of the endpoint group
"""

import bisect
import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, FrozenSet, Iterable, List, Optional, Tuple

from .errors import ConfigError
from .log_templater import EventKind, EventManager, TemplateStore, log_event_key
from .trace_model import EndpointKey, LogEvent, LogLevel, Span, SpanStatus, Trace, root_endpoint

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1

Pair = Tuple[int, int]


def _mix64(value: int) -> int:
    """splitmix64 finalizer"""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def pair_digest(pairs: Iterable[Pair]) -> int:
    """Order-independent 64-bit digest of a set of pairs"""
    total = 0
    for a, b in pairs:
        total = (total + _mix64(((a & 0xFFFFFFFF) << 32) | (b & 0xFFFFFFFF))) & _MASK64
    return total


@dataclass(frozen=True, eq=False)
class EventPairSet:
    """Hashable set of event-id pairs; equality is digest first, then full set"""
    pairs: FrozenSet[Pair]
    hash64: int

    @classmethod
    def from_pairs(cls, pairs: Iterable[Pair]) -> "EventPairSet":
        frozen = frozenset(pairs)
        return cls(frozen, pair_digest(frozen))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventPairSet):
            return NotImplemented
        return self is other or (self.hash64 == other.hash64 and self.pairs == other.pairs)

    def __hash__(self) -> int:
        return self.hash64

    def __len__(self) -> int:
        return len(self.pairs)

    def sorted_pairs(self) -> List[List[int]]:
        return [list(p) for p in sorted(self.pairs)]


@dataclass(frozen=True)
class AnomalyConfig:
    w_err: float = 5.0
    w_lw: float = 1.0
    w_le: float = 2.0
    perf_factor: float = 1.2
    perf_score: float = 3.0
    anomaly_threshold: float = 1.0
    min_observations: int = 20
    window_capacity: int = 1000
    include_logs: bool = True

    def __post_init__(self):
        for name in ("w_err", "w_lw", "w_le", "perf_score"):
            if getattr(self, name) < 0:
                raise ConfigError(f"encoder.{name} must be >= 0")
        if self.perf_factor <= 1:
            raise ConfigError("encoder.perf_factor must be > 1")
        if self.window_capacity < 1:
            raise ConfigError("encoder.window_capacity must be >= 1")
        if self.min_observations < 1:
            raise ConfigError("encoder.min_observations must be >= 1")


class GroupStats:
    """
    Recent end-to-end durations of one endpoint group

    Keeps a bounded FIFO window and an exact nearest-rank p90 over it.
    """

    def __init__(self, endpoint: Optional[EndpointKey] = None, capacity: int = 1000):
        self.endpoint = endpoint
        self.capacity = capacity
        self.duration_window: Deque[int] = deque(maxlen=capacity)
        self._sorted: List[int] = []
        self.p90: Optional[int] = None

    def observe(self, duration: int) -> "GroupStats":
        if duration < 0:
            raise ValueError(f"duration must be >= 0, got {duration}")
        if len(self.duration_window) == self.capacity:
            oldest = self.duration_window[0]
            del self._sorted[bisect.bisect_left(self._sorted, oldest)]
        self.duration_window.append(duration)
        bisect.insort(self._sorted, duration)
        n = len(self._sorted)
        # nearest rank: ceil(0.9 n) - 1, in integers
        self.p90 = self._sorted[(9 * n + 9) // 10 - 1]
        return self

    def __len__(self) -> int:
        return len(self.duration_window)

    def is_warm(self, min_observations: int) -> bool:
        return len(self.duration_window) >= min_observations

    def is_degraded(self, duration: int, cfg: AnomalyConfig) -> bool:
        return (self.p90 is not None
                and self.is_warm(cfg.min_observations)
                and duration > cfg.perf_factor * self.p90)


def update_group_stats(stats: GroupStats, duration: int) -> GroupStats:
    return stats.observe(duration)


@dataclass(frozen=True)
class EncodedTrace:
    trace_id: str
    endpoint: EndpointKey
    eps: EventPairSet
    anomaly: float
    end_to_end_duration: int
    arrival: int
    degraded: bool = False

    def to_debug_dict(self) -> Dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "endpoint": str(self.endpoint),
            "anomaly": float(self.anomaly),
            "pairs": self.eps.sorted_pairs(),
        }


def _log_key(log: LogEvent, templates: Optional[TemplateStore]) -> Tuple[int, str]:
    if log.template_id is not None:
        return log.template_id, log_event_key(log.template_id, external=True)
    if templates is None:
        raise ValueError("Raw log message found but no TemplateStore given")
    tid = templates.template_of(log.message)
    return tid, log_event_key(tid)


def canonical_event_sequence(span: Span,
                             mgr: EventManager,
                             degraded: bool = False,
                             templates: Optional[TemplateStore] = None,
                             include_logs: bool = True) -> List[int]:
    """
    Deterministic event sequence of one span

    Logs are ordered by timestamp, ties by template id.
    """
    key = span.endpoint_label
    sequence = [mgr.event_id(EventKind.SPAN_START, key)]
    if include_logs and span.logs:
        keys = sorted((log.timestamp, *_log_key(log, templates)) for log in span.logs)
        sequence.extend(mgr.event_id(EventKind.LOG, key) for _, _, key in keys)
    if span.status == SpanStatus.ERROR:
        sequence.append(mgr.event_id(EventKind.STATUS_ERROR, key))
    if degraded:
        sequence.append(mgr.event_id(EventKind.PERF_DEG, key))
    sequence.append(mgr.event_id(EventKind.SPAN_END, key))
    return sequence


def anomaly_score(trace: Trace, stats: Optional[GroupStats], cfg: AnomalyConfig) -> float:
    score = 0.0
    for span in trace.spans:
        if span.status == SpanStatus.ERROR:
            score += cfg.w_err
        if cfg.include_logs:
            for log in span.logs:
                if log.level == LogLevel.WARN:
                    score += cfg.w_lw
                elif log.level == LogLevel.ERROR:
                    score += cfg.w_le
    if stats is not None and stats.is_degraded(trace.end_to_end_duration, cfg):
        score += cfg.perf_score
    return score


def encode(trace: Trace,
           mgr: EventManager,
           stats: Optional[GroupStats],
           cfg: AnomalyConfig,
           templates: Optional[TemplateStore] = None) -> EncodedTrace:
    """
    Encode a trace into (EPS, anomaly)

    Args:
        stats: duration stats of the trace's root-endpoint group (may be cold or None)
        templates: used for logs that still carry raw text
    """
    duration = trace.end_to_end_duration
    degraded = stats is not None and stats.is_degraded(duration, cfg)

    pairs = set()
    for i, span in enumerate(trace.spans):
        seq = canonical_event_sequence(span, mgr,
                                       degraded=degraded and i == trace.root_index,
                                       templates=templates,
                                       include_logs=cfg.include_logs)
        pairs.update(zip(seq, seq[1:]))

    for parent, child in trace.parent_child_pairs():
        pairs.add((mgr.event_id(EventKind.SPAN_END, trace.spans[parent].endpoint_label),
                   mgr.event_id(EventKind.SPAN_START, trace.spans[child].endpoint_label)))

    return EncodedTrace(
        trace_id=trace.trace_id,
        endpoint=root_endpoint(trace),
        eps=EventPairSet.from_pairs(pairs),
        anomaly=anomaly_score(trace, stats, cfg),
        end_to_end_duration=duration,
        arrival=trace.arrival,
        degraded=degraded,
    )


class TraceEncoder:
    """
    Stateful encoder: owns event ids, templates and per-endpoint duration stats

    Group stats are only advanced through commit_durations so a batch of traces
    is scored against the same baseline.
    """

    def __init__(self, cfg: AnomalyConfig,
                 mgr: Optional[EventManager] = None,
                 templates: Optional[TemplateStore] = None):
        self.cfg = cfg
        self.mgr = mgr or EventManager()
        self.templates = templates or TemplateStore()
        self.group_stats: Dict[EndpointKey, GroupStats] = {}

    def stats_for(self, endpoint: EndpointKey) -> GroupStats:
        stats = self.group_stats.get(endpoint)
        if stats is None:
            stats = self.group_stats[endpoint] = GroupStats(endpoint, self.cfg.window_capacity)
        return stats

    def encode(self, trace: Trace) -> EncodedTrace:
        for span in trace.spans:
            for log in span.logs:
                if log.template_id is not None:
                    self.templates.register_external(log.template_id)
        return encode(trace, self.mgr, self.stats_for(root_endpoint(trace)), self.cfg, self.templates)

    def commit_durations(self, encoded: Iterable[EncodedTrace]) -> None:
        for enc in encoded:
            self.stats_for(enc.endpoint).observe(enc.end_to_end_duration)
