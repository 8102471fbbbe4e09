#!/usr/bin/env python3
"""
SamplerTelemetry Record Definition

Per-window sampler state for monitoring and tuning. One record per sealed
window is appended to telemetry.jsonl when telemetry output is enabled.

Timings are wall-clock measurements, so unlike samples.jsonl this file is
not expected to be identical across replays.
"""

from dataclasses import dataclass
from typing import Any, Dict

from .dpp_selector import cache_stats


@dataclass
class SamplerTelemetry:
    """
    Window-level sampler telemetry.

    Covers budget decisions, stage timings and the size of the cross-window
    state, so drift in template or event-id growth is visible.
    """

    # Window
    window_id: int
    window_start_ns: int
    window_end_ns: int
    trace_count: int

    # Budget
    budget_total: int
    budget_scale: float                 # QPM compensation factor (1.0 = none)
    selected: int
    unspent: int
    groups: int
    alarmed_groups: int

    # Stage timings (seconds)
    encode_s: float
    allocate_s: float
    select_s: float

    # Cross-window state
    event_ids: int
    templates: int
    tracked_endpoints: int
    qpm_history: int
    cache_entries: int
    cache_hits: int
    cache_misses: int
    cache_hit_rate: float

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return {
            'window': {
                'id': self.window_id,
                'start_ns': self.window_start_ns,
                'end_ns': self.window_end_ns,
                'traces': self.trace_count,
            },
            'budget': {
                'total': self.budget_total,
                'scale': self.budget_scale,
                'selected': self.selected,
                'unspent': self.unspent,
                'groups': self.groups,
                'alarmed_groups': self.alarmed_groups,
            },
            'timing_s': {
                'encode': self.encode_s,
                'allocate': self.allocate_s,
                'select': self.select_s,
            },
            'state': {
                'event_ids': self.event_ids,
                'templates': self.templates,
                'tracked_endpoints': self.tracked_endpoints,
                'qpm_history': self.qpm_history,
            },
            'similarity_cache': {
                'entries': self.cache_entries,
                'hits': self.cache_hits,
                'misses': self.cache_misses,
                'hit_rate': self.cache_hit_rate,
            },
        }

    @classmethod
    def from_sample_set(cls, sample_set, state):
        """
        Create telemetry from a processed window.

        Args:
            sample_set: SampleSet returned for the window
            state: SamplerState after the window's selection

        Returns:
            SamplerTelemetry instance
        """
        plan = sample_set.plan
        cache = state.similarity_cache
        stats = cache_stats(cache)
        timing = sample_set.timing

        return cls(
            window_id=sample_set.window_id,
            window_start_ns=sample_set.window_start,
            window_end_ns=sample_set.window_end,
            trace_count=sample_set.trace_count,
            budget_total=plan.total,
            budget_scale=plan.scale,
            selected=len(sample_set.selected),
            unspent=plan.unspent,
            groups=len(plan.entries),
            alarmed_groups=sum(1 for e in plan.entries if e.alarmed),
            encode_s=timing.encode_s,
            allocate_s=timing.allocate_s,
            select_s=timing.select_s,
            event_ids=len(state.event_manager),
            templates=len(state.template_store),
            tracked_endpoints=len(state.group_stats),
            qpm_history=len(state.qpm_history),
            cache_entries=len(cache) if cache is not None else 0,
            cache_hits=stats['hits'],
            cache_misses=stats['misses'],
            cache_hit_rate=stats['hit_rate'],
        )
