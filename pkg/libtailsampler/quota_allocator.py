#!/usr/bin/env python3
"""
Quota Allocator

Two-layer, alarm-driven budget allocation over one sealed buffer window.

Layer 1 (global_budget): base budget = rate * traces; when per-minute volume
falls below drop_threshold * historical mean the budget is scaled up by
hist/current, capped at scale_max.

Layer 2 (allocate): the budget is split between the NORMAL and ABNORMAL
periods by volume (rounding surplus to ABNORMAL), then across root-endpoint
groups. NORMAL is an even split. In ABNORMAL, alarmed groups share a boosted
pool of min(boost_max * avg * |alarmed|, boost_cap_fraction * share) and the
rest is spread evenly over the other groups. The cap holds even when every
ABNORMAL group is alarmed; what the cap keeps back goes to NORMAL groups or
is reported unspent.

Every split uses largest-remainder rounding: extra units go to the groups
with the most candidates, ties by endpoint order. Quotas are clamped to the
group size and the reclaimed units are handed out again.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import ConfigError, MalformedRecord
from .jsonl_io import decode_line
from .trace_encoder import EncodedTrace
from .trace_model import EndpointKey

logger = logging.getLogger(__name__)

NS_PER_MINUTE = 60_000_000_000

# single pseudo-group used when root grouping is switched off
ALL_TRAFFIC = EndpointKey("*", "*")


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


class Period(str, Enum):
    NORMAL = "NORMAL"
    ABNORMAL = "ABNORMAL"


@dataclass(frozen=True)
class Alarm:
    window_start: int
    window_end: int
    endpoints: FrozenSet[EndpointKey]

    def __post_init__(self):
        if self.window_start >= self.window_end:
            raise ValueError("alarm window_start must be < window_end")
        if not self.endpoints:
            raise ValueError("alarm needs at least one endpoint")

    def overlaps(self, start: int, end: int) -> bool:
        return self.window_start < end and start < self.window_end

    def covers(self, ts: int) -> bool:
        return self.window_start <= ts < self.window_end

    def to_record(self) -> Dict[str, Any]:
        return {
            "window_start_ns": self.window_start,
            "window_end_ns": self.window_end,
            "endpoints": [e.to_dict() for e in sorted(self.endpoints)],
        }


@dataclass(frozen=True)
class AlarmFeed:
    alarms: Tuple[Alarm, ...] = ()

    def overlapping(self, start: int, end: int) -> List[Alarm]:
        return [a for a in self.alarms if a.overlaps(start, end)]

    def __len__(self) -> int:
        return len(self.alarms)


def alarm_from_record(record: Any, line_no: int = 0) -> Alarm:
    if not isinstance(record, dict):
        raise MalformedRecord(line_no, "alarm record is not a JSON object")
    try:
        start = record["window_start_ns"]
        end = record["window_end_ns"]
        endpoints = frozenset(EndpointKey(e["service"], e["operation"]) for e in record["endpoints"])
        if not isinstance(start, int) or not isinstance(end, int):
            raise TypeError("window bounds must be integers")
        return Alarm(start, end, endpoints)
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedRecord(line_no, f"bad alarm record ({e})")


def parse_alarm_stream(lines: Iterable[Union[str, bytes]], source: Optional[str] = None) -> AlarmFeed:
    """Alarm JSONL; unlike span streams a bad alarm line is fatal"""
    alarms = []
    for line_no, line in enumerate(lines, start=1):
        text = decode_line(line, line_no, source).strip()
        if not text:
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_no, f"invalid JSON ({e.msg})", source)
        alarms.append(alarm_from_record(record, line_no))
    return AlarmFeed(tuple(alarms))


@dataclass(frozen=True)
class BufferWindow:
    traces: Tuple[EncodedTrace, ...]
    window_start: int
    window_end: int
    qpm_history: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.window_start >= self.window_end:
            raise ValueError("buffer window_start must be < window_end")

    @property
    def minutes(self) -> float:
        return (self.window_end - self.window_start) / NS_PER_MINUTE

    @property
    def qpm(self) -> float:
        return len(self.traces) / self.minutes


@dataclass(frozen=True)
class AllocatorConfig:
    base_budget_fraction: float = 0.05
    boost_max: float = 3.0
    boost_cap_fraction: float = 0.5
    drop_threshold: float = 0.7
    scale_max: float = 2.0
    qpm_history_depth: int = 10
    qpm_scaling_enabled: bool = True

    def __post_init__(self):
        if not 0 < self.base_budget_fraction <= 1:
            raise ConfigError("allocator.base_budget_fraction must be in (0, 1]")
        if not 0 < self.boost_cap_fraction <= 1:
            raise ConfigError("allocator.boost_cap_fraction must be in (0, 1]")
        if self.boost_max < 1:
            raise ConfigError("allocator.boost_max must be >= 1")
        if self.scale_max < 1:
            raise ConfigError("allocator.scale_max must be >= 1")
        if not 0 < self.drop_threshold <= 1:
            raise ConfigError("allocator.drop_threshold must be in (0, 1]")
        if self.qpm_history_depth < 1:
            raise ConfigError("allocator.qpm_history_depth must be >= 1")


@dataclass(frozen=True)
class QuotaEntry:
    period: Period
    endpoint: EndpointKey
    quota: int
    candidates: int
    alarmed: bool = False

    def to_record(self) -> Dict[str, Any]:
        return {
            "period": self.period.value,
            "endpoint": str(self.endpoint),
            "quota": self.quota,
            "candidates": self.candidates,
            "alarmed": self.alarmed,
        }


@dataclass(frozen=True)
class QuotaPlan:
    entries: Tuple[QuotaEntry, ...] = ()
    total: int = 0
    unspent: int = 0
    scale: float = 1.0

    @property
    def allocated(self) -> int:
        return sum(e.quota for e in self.entries)

    def quota_for(self, period: Period, endpoint: EndpointKey) -> int:
        for e in self.entries:
            if e.period == period and e.endpoint == endpoint:
                return e.quota
        return 0


GroupKey = Tuple[Period, EndpointKey]


def group_by_root(traces: Iterable[EncodedTrace]) -> Dict[EndpointKey, List[EncodedTrace]]:
    groups: Dict[EndpointKey, List[EncodedTrace]] = {}
    for t in traces:
        groups.setdefault(t.endpoint, []).append(t)
    return groups


def split_periods(buffer: BufferWindow, alarms: AlarmFeed) -> Tuple[List[EncodedTrace], List[EncodedTrace]]:
    active = alarms.overlapping(buffer.window_start, buffer.window_end)
    normal, abnormal = [], []
    for t in buffer.traces:
        if any(a.covers(t.arrival) for a in active):
            abnormal.append(t)
        else:
            normal.append(t)
    return normal, abnormal


def alarmed_endpoints(buffer: BufferWindow, alarms: AlarmFeed) -> FrozenSet[EndpointKey]:
    found = set()
    for a in alarms.overlapping(buffer.window_start, buffer.window_end):
        found.update(a.endpoints)
    return frozenset(found)


def partition_candidates(buffer: BufferWindow,
                         alarms: AlarmFeed,
                         grouped: bool = True) -> Dict[GroupKey, List[EncodedTrace]]:
    """(period, endpoint) -> candidates in arrival order, keys sorted"""
    normal, abnormal = split_periods(buffer, alarms)
    parts: Dict[GroupKey, List[EncodedTrace]] = {}
    for period, traces in ((Period.NORMAL, normal), (Period.ABNORMAL, abnormal)):
        if grouped:
            groups = group_by_root(traces)
        else:
            groups = {ALL_TRAFFIC: list(traces)} if traces else {}
        for endpoint in sorted(groups):
            parts[(period, endpoint)] = groups[endpoint]
    return parts


def global_budget(buffer: BufferWindow, cfg: AllocatorConfig) -> Tuple[int, float]:
    n = len(buffer.traces)
    base = round_half_up(cfg.base_budget_fraction * n)
    scale = 1.0
    if cfg.qpm_scaling_enabled and buffer.qpm_history and n > 0:
        hist = sum(buffer.qpm_history) / len(buffer.qpm_history)
        current = buffer.qpm
        if hist > 0 and current < cfg.drop_threshold * hist:
            scale = min(hist / current, cfg.scale_max)
    total = min(round_half_up(scale * base), n)
    return total, scale


def _even_split(share: int,
                capacities: Dict[EndpointKey, int],
                quotas: Dict[EndpointKey, int]) -> int:
    """
    Water-fill `share` units evenly over groups, on top of existing quotas

    Returns the units that could not be placed because every group is full.
    """
    remaining = share
    while remaining > 0:
        open_groups = [k for k in capacities if quotas[k] < capacities[k]]
        if not open_groups:
            break
        each, extra = divmod(remaining, len(open_groups))
        # extra units: biggest groups first, then endpoint order
        ranked = sorted(open_groups, key=lambda k: (-capacities[k], k))
        bonus = set(ranked[:extra])
        for k in ranked:
            want = each + (1 if k in bonus else 0)
            give = min(want, capacities[k] - quotas[k])
            quotas[k] += give
            remaining -= give
    return remaining


def _alarm_cap(share: int, cfg: AllocatorConfig) -> int:
    """Most units the alarmed groups of one period may hold in total"""
    return int(math.ceil(cfg.boost_cap_fraction * share - 1e-9))


def _abnormal_split(share: int,
                    capacities: Dict[EndpointKey, int],
                    alarmed: FrozenSet[EndpointKey],
                    cfg: AllocatorConfig,
                    quotas: Dict[EndpointKey, int]) -> int:
    hot = {k: c for k, c in capacities.items() if k in alarmed}
    cold = {k: c for k, c in capacities.items() if k not in alarmed}
    if not hot:
        return _even_split(share, capacities, quotas)

    m = len(capacities)
    avg = share / m
    cap_units = _alarm_cap(share, cfg)
    pool = min(len(hot) * cfg.boost_max * avg, cfg.boost_cap_fraction * share)
    pool_units = min(int(math.floor(pool + 1e-9)), cap_units)
    # one unit per group when the share allows it, alarmed groups only within the cap
    if share >= m:
        room = share - len(cold)
        pool_units = max(min(pool_units, room), min(len(hot), room, cap_units))

    hot_quotas = {k: 0 for k in hot}
    spill = _even_split(pool_units, hot, hot_quotas)
    quotas.update(hot_quotas)

    if not cold:
        return share - pool_units + spill
    cold_quotas = {k: 0 for k in cold}
    left = _even_split(share - pool_units + spill, cold, cold_quotas)
    quotas.update(cold_quotas)
    return left


def allocate(buffer: BufferWindow,
             alarms: AlarmFeed,
             cfg: AllocatorConfig,
             grouped: bool = True) -> QuotaPlan:
    """
    Build the per-(period, group) quota plan for a sealed buffer

    An empty plan (total 0) tells the caller to skip selection.
    """
    total, scale = global_budget(buffer, cfg)
    if total == 0:
        logger.debug("Zero budget for window; nothing to select")
        return QuotaPlan((), 0, 0, scale)

    parts = partition_candidates(buffer, alarms, grouped)
    alarmed = alarmed_endpoints(buffer, alarms) if grouped else frozenset()

    caps: Dict[Period, Dict[EndpointKey, int]] = {Period.NORMAL: {}, Period.ABNORMAL: {}}
    for (period, endpoint), traces in parts.items():
        caps[period][endpoint] = len(traces)

    n_normal = sum(caps[Period.NORMAL].values())
    n_total = len(buffer.traces)
    normal_share = (total * n_normal) // n_total
    abnormal_share = total - normal_share

    quotas: Dict[Period, Dict[EndpointKey, int]] = {
        p: {k: 0 for k in caps[p]} for p in caps
    }
    # normal_share never exceeds the normal candidates, so only ABNORMAL can
    # leave units over; they go to normal groups, never back to alarmed ones
    _even_split(normal_share, caps[Period.NORMAL], quotas[Period.NORMAL])
    left_abnormal = _abnormal_split(abnormal_share, caps[Period.ABNORMAL], alarmed, cfg,
                                    quotas[Period.ABNORMAL])
    unspent = 0
    if left_abnormal:
        unspent = _even_split(left_abnormal, caps[Period.NORMAL], quotas[Period.NORMAL])

    entries = []
    for period in (Period.NORMAL, Period.ABNORMAL):
        for endpoint in sorted(caps[period]):
            entries.append(QuotaEntry(period, endpoint, quotas[period][endpoint],
                                      caps[period][endpoint],
                                      alarmed=period == Period.ABNORMAL and endpoint in alarmed))

    if unspent:
        logger.warning(f"Quota plan leaves {unspent} of {total} unspent (groups saturated)")
    plan = QuotaPlan(tuple(entries), total, unspent, scale)
    logger.debug(f"Quota plan: total={total} scale={scale:.2f} "
                 f"normal={normal_share} abnormal={abnormal_share} groups={len(entries)}")
    return plan
