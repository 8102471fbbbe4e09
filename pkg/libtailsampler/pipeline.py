#!/usr/bin/env python3
"""
Sampling pipeline

ingest -> encode -> buffer -> allocate -> select, over fixed windows sealed
by trace arrival time (not wall clock) so a file replays identically.

Cross-window state (event ids, templates, per-endpoint duration stats,
similarity cache, QPM history) lives in SamplerState and only changes at
ingestion and after a window's outputs were written.
"""

import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Deque, Dict, Iterable, Iterator, List, Optional, Tuple

from .dpp_selector import SelectorConfig, SimilarityCache, greedy_select, top_anomaly_select
from .errors import SinkWriteError
from .jsonl_io import JsonlWriter
from .quota_allocator import (AlarmFeed, AllocatorConfig, BufferWindow, Period, QuotaPlan,
                              allocate, partition_candidates)
from .sampler_telemetry import SamplerTelemetry
from .trace_encoder import AnomalyConfig, EncodedTrace, TraceEncoder
from .trace_model import EndpointKey, Trace, trace_to_records

logger = logging.getLogger(__name__)


class SamplerVariant(str, Enum):
    """Selection strategies; everything but FULL switches one component off"""
    FULL = "full"
    NO_LOGS = "no_logs"
    NO_ALARMS = "no_alarms"
    NO_LOGS_NO_ALARMS = "no_logs_no_alarms"
    PURE_DIVERSITY = "pure_diversity"
    PURE_ANOMALY = "pure_anomaly"
    NO_ANOMALY = "no_anomaly"
    NO_DIVERSITY = "no_diversity"

    @property
    def uses_logs(self) -> bool:
        return self not in (SamplerVariant.NO_LOGS, SamplerVariant.NO_LOGS_NO_ALARMS)

    @property
    def uses_alarms(self) -> bool:
        return self not in (SamplerVariant.NO_ALARMS, SamplerVariant.NO_LOGS_NO_ALARMS)

    @property
    def grouped(self) -> bool:
        return self not in (SamplerVariant.PURE_DIVERSITY, SamplerVariant.PURE_ANOMALY)

    @property
    def uses_quality(self) -> bool:
        return self not in (SamplerVariant.PURE_DIVERSITY, SamplerVariant.NO_ANOMALY)

    @property
    def uses_diversity(self) -> bool:
        return self not in (SamplerVariant.PURE_ANOMALY, SamplerVariant.NO_DIVERSITY)


@dataclass(frozen=True)
class PipelineSettings:
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    allocator: AllocatorConfig = field(default_factory=AllocatorConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    window_seconds: float = 60.0
    variant: SamplerVariant = SamplerVariant.FULL
    cache_enabled: bool = True

    @property
    def window_ns(self) -> int:
        return int(round(self.window_seconds * 1_000_000_000))


@dataclass
class SamplerState:
    settings: PipelineSettings
    encoder: TraceEncoder
    similarity_cache: Optional[SimilarityCache]
    qpm_history: Deque[float]
    windows_processed: int = 0

    @classmethod
    def create(cls, settings: PipelineSettings) -> "SamplerState":
        anomaly = settings.anomaly
        if not settings.variant.uses_logs:
            anomaly = replace(anomaly, include_logs=False)
        cache = SimilarityCache(settings.selector.cache_capacity) if settings.cache_enabled else None
        return cls(
            settings=settings,
            encoder=TraceEncoder(anomaly),
            similarity_cache=cache,
            qpm_history=deque(maxlen=settings.allocator.qpm_history_depth),
        )

    @property
    def event_manager(self):
        return self.encoder.mgr

    @property
    def template_store(self):
        return self.encoder.templates

    @property
    def group_stats(self):
        return self.encoder.group_stats


@dataclass(frozen=True)
class SampledTrace:
    trace_id: str
    endpoint: EndpointKey
    anomaly: float
    period: Period

    def to_record(self, window_id: int) -> Dict[str, Any]:
        return {
            "window_id": window_id,
            "trace_id": self.trace_id,
            "endpoint": str(self.endpoint),
            "period": self.period.value,
            "anomaly": float(self.anomaly),
        }


@dataclass
class StageTiming:
    encode_s: float = 0.0
    allocate_s: float = 0.0
    select_s: float = 0.0
    encode_latencies_s: List[float] = field(default_factory=list)

    @property
    def total_s(self) -> float:
        return self.encode_s + self.allocate_s + self.select_s


@dataclass
class SampleSet:
    window_id: int
    window_start: int
    window_end: int
    trace_count: int
    selected: List[SampledTrace] = field(default_factory=list)
    total: int = 0
    unspent: int = 0
    scale: float = 1.0
    plan: QuotaPlan = field(default_factory=QuotaPlan)
    timing: StageTiming = field(default_factory=StageTiming)

    @property
    def trace_ids(self) -> List[str]:
        return [s.trace_id for s in self.selected]


@dataclass
class PipelineSinks:
    """Optional outputs; debug sinks stay None unless asked for"""
    samples: Optional[JsonlWriter] = None
    passthrough: Optional[JsonlWriter] = None
    encoded: Optional[JsonlWriter] = None
    quota_plan: Optional[JsonlWriter] = None
    selection_trace: Optional[JsonlWriter] = None
    telemetry: Optional[JsonlWriter] = None

    def close(self) -> None:
        for sink in (self.samples, self.passthrough, self.encoded,
                     self.quota_plan, self.selection_trace, self.telemetry):
            if sink is not None:
                sink.close()


def _select_group(state: SamplerState,
                  candidates: List[EncodedTrace],
                  quota: int,
                  steps: List[Tuple[int, int, float]]) -> List[int]:
    variant = state.settings.variant
    if not variant.uses_diversity:
        return top_anomaly_select(candidates, quota)
    cfg = state.settings.selector
    if cfg.use_quality != variant.uses_quality:
        cfg = replace(cfg, use_quality=variant.uses_quality)
    return greedy_select(candidates, quota, cfg, state.similarity_cache,
                         on_step=lambda step, idx, gain: steps.append((step, idx, gain)))


def process_window(state: SamplerState,
                   window_id: int,
                   batch: List[Tuple[Trace, EncodedTrace]],
                   alarms: AlarmFeed,
                   timing: StageTiming,
                   sinks: Optional[PipelineSinks] = None,
                   flushed: bool = False) -> SampleSet:
    """
    Allocate and select over one sealed window, write outputs, then advance state

    A flushed window (the source ran out inside it) is allocated without
    traffic-drop scaling.
    """
    settings = state.settings
    allocator_cfg = settings.allocator
    if flushed and allocator_cfg.qpm_scaling_enabled:
        allocator_cfg = replace(allocator_cfg, qpm_scaling_enabled=False)
    start = window_id * settings.window_ns
    end = start + settings.window_ns
    encoded = tuple(enc for _, enc in batch)
    buffer = BufferWindow(encoded, start, end, tuple(state.qpm_history))
    feed = alarms if settings.variant.uses_alarms else AlarmFeed()
    grouped = settings.variant.grouped

    t0 = time.perf_counter()
    plan = allocate(buffer, feed, allocator_cfg, grouped=grouped)
    parts = partition_candidates(buffer, feed, grouped) if plan.total else {}
    t1 = time.perf_counter()

    selected: List[SampledTrace] = []
    selection_records: List[Dict[str, Any]] = []
    for entry in plan.entries:
        if entry.quota == 0:
            continue
        candidates = parts[(entry.period, entry.endpoint)]
        steps: List[Tuple[int, int, float]] = []
        for idx in _select_group(state, candidates, entry.quota, steps):
            c = candidates[idx]
            selected.append(SampledTrace(c.trace_id, c.endpoint, c.anomaly, entry.period))
        for step, idx, gain in steps:
            selection_records.append({
                "window_id": window_id,
                "period": entry.period.value,
                "endpoint": str(entry.endpoint),
                "step": step,
                "chosen_trace_id": candidates[idx].trace_id,
                "marginal_gain": gain,
            })
    t2 = time.perf_counter()

    timing.allocate_s = t1 - t0
    timing.select_s = t2 - t1
    sample_set = SampleSet(
        window_id=window_id,
        window_start=start,
        window_end=end,
        trace_count=len(encoded),
        selected=selected,
        total=plan.total,
        unspent=plan.unspent,
        scale=plan.scale,
        plan=plan,
        timing=timing,
    )

    if sinks is not None:
        _write_outputs(state, sample_set, batch, selection_records, sinks)

    # state advances only after the window's outputs are safely written
    state.encoder.commit_durations(encoded)
    state.qpm_history.append(buffer.qpm)
    state.windows_processed += 1

    logger.info(f"Window {window_id}: {len(encoded)} traces, budget {plan.total} "
                f"(scale {plan.scale:.2f}), selected {len(selected)}, unspent {plan.unspent}")
    return sample_set


def _write_outputs(state: SamplerState,
                   sample_set: SampleSet,
                   batch: List[Tuple[Trace, EncodedTrace]],
                   selection_records: List[Dict[str, Any]],
                   sinks: PipelineSinks) -> None:
    wid = sample_set.window_id
    try:
        if sinks.samples is not None:
            for s in sample_set.selected:
                sinks.samples.write(s.to_record(wid))
        if sinks.passthrough is not None:
            by_id = {trace.trace_id: trace for trace, _ in batch}
            for s in sample_set.selected:
                for record in trace_to_records(by_id[s.trace_id]):
                    sinks.passthrough.write(record)
        if sinks.encoded is not None:
            for _, enc in batch:
                sinks.encoded.write(enc.to_debug_dict())
        if sinks.quota_plan is not None:
            for entry in sample_set.plan.entries:
                record = {"window_id": wid}
                record.update(entry.to_record())
                sinks.quota_plan.write(record)
        if sinks.selection_trace is not None:
            for record in selection_records:
                sinks.selection_trace.write(record)
        if sinks.telemetry is not None:
            sinks.telemetry.write(SamplerTelemetry.from_sample_set(sample_set, state).to_dict())
    except SinkWriteError:
        logger.error(f"Sink write failed in window {wid}; state left at previous window")
        raise


def run_stream(traces: Iterable[Trace],
               alarms: AlarmFeed,
               state: SamplerState,
               sinks: Optional[PipelineSinks] = None) -> Iterator[SampleSet]:
    """
    Stream traces (nondecreasing arrival) through the sampler

    Yields one SampleSet per sealed window; the last, possibly partial,
    window is flushed when the source runs out and never scaled up.
    """
    window_ns = state.settings.window_ns
    current: Optional[int] = None
    batch: List[Tuple[Trace, EncodedTrace]] = []
    timing = StageTiming()

    for trace in traces:
        wid = trace.arrival // window_ns
        if current is None:
            current = wid
        elif wid > current:
            yield process_window(state, current, batch, alarms, timing, sinks)
            current, batch, timing = wid, [], StageTiming()
        elif wid < current:
            logger.warning(f"Trace {trace.trace_id} arrived after window {wid} was sealed; "
                           f"folded into window {current}")

        t0 = time.perf_counter()
        enc = state.encoder.encode(trace)
        elapsed = time.perf_counter() - t0
        timing.encode_s += elapsed
        timing.encode_latencies_s.append(elapsed)
        batch.append((trace, enc))

    if batch:
        yield process_window(state, current, batch, alarms, timing, sinks, flushed=True)


def _nearest_rank(sorted_values: List[float], q: float) -> float:
    n = len(sorted_values)
    idx = max(0, min(n - 1, int(-(-q * n // 1)) - 1))
    return sorted_values[idx]


def _runtime_summary(total_s: float, count: int, latencies: List[float]) -> Dict[str, Optional[float]]:
    if count == 0:
        return {"mean_ms": None, "p50_ms": None, "p99_ms": None}
    ordered = sorted(latencies)
    return {
        "mean_ms": total_s / count * 1000.0,
        "p50_ms": _nearest_rank(ordered, 0.50) * 1000.0,
        "p99_ms": _nearest_rank(ordered, 0.99) * 1000.0,
    }


def measure_per_trace_runtime(sample_set: SampleSet) -> Dict[str, Optional[float]]:
    """Mean = all stage time / traces; quantiles over per-trace encode latency"""
    t = sample_set.timing
    return _runtime_summary(t.total_s, sample_set.trace_count, t.encode_latencies_s)


def aggregate_runtime(sample_sets: Iterable[SampleSet]) -> Dict[str, Optional[float]]:
    total_s, count, latencies = 0.0, 0, []
    for s in sample_sets:
        total_s += s.timing.total_s
        count += s.trace_count
        latencies.extend(s.timing.encode_latencies_s)
    return _runtime_summary(total_s, count, latencies)


def sample(traces: Iterable[Trace],
           alarms: AlarmFeed,
           settings: PipelineSettings,
           sinks: Optional[PipelineSinks] = None) -> Tuple[List[SampleSet], SamplerState]:
    """Run a whole stream with fresh state; convenience for tests and the CLI"""
    state = SamplerState.create(settings)
    sets = list(run_stream(traces, alarms, state, sinks))
    return sets, state
