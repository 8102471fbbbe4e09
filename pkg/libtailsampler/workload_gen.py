#!/usr/bin/env python3
"""
Synthetic workload generator

Builds reproducible microservice trace corpora for desk-scale experiments:

- endpoint traffic follows a Zipf law, and so does the choice of call-tree
  variant inside each endpoint, giving a long-tail path distribution
- every variant is a fixed call tree of min_spans..max_spans spans with
  occasional parallel fan-out and INFO logs drawn from a phrase pool with
  numeric variables
- faults mutate traffic inside their window by observable symptom only
- every trace gets a ground-truth label

Output is a pure function of ScenarioConfig (numpy Generator seeded once).
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import InvalidScenario
from .evaluation import canonical_path
from .jsonl_io import write_records
from .quota_allocator import NS_PER_MINUTE, round_half_up
from .trace_model import assemble_trace, span_from_record

logger = logging.getLogger(__name__)

# 2023-11-14T21:53:00Z, minute aligned so generated minutes match sampler windows
DEFAULT_START_NS = 1_699_999_980_000_000_000

LATENCY_FACTOR = 2.5
DURATION_SIGMA = 0.08
FANOUT_PROBABILITY = 0.15

ENTRY_ENDPOINTS: Tuple[Tuple[str, str], ...] = (
    ("ts-travel-service", "queryInfo"),
    ("ts-basic-service", "queryForTravel"),
    ("ts-order-service", "queryOrders"),
    ("ts-preserve-service", "preserve"),
    ("ts-user-service", "getAllUsers"),
    ("ts-auth-service", "getToken"),
    ("ts-food-service", "getAllFood"),
    ("ts-station-service", "query"),
    ("ts-route-service", "queryAll"),
    ("ts-price-service", "queryAll"),
    ("ts-contacts-service", "getContactsByAccountId"),
    ("ts-cancel-service", "calculate"),
    ("ts-rebook-service", "rebook"),
    ("ts-consign-service", "findByAccountId"),
    ("ts-assurance-service", "getAllAssuranceType"),
    ("ts-seat-service", "getLeftTicketOfInterval"),
    ("ts-config-service", "retrieve"),
    ("ts-inside-payment-service", "pay"),
    ("ts-security-service", "check"),
    ("ts-travel-plan-service", "getByCheapest"),
    ("ts-notification-service", "preserveSuccess"),
    ("ts-ticketinfo-service", "queryForTravel"),
    ("ts-train-service", "queryForTrainType"),
    ("ts-payment-service", "query"),
)

DOWNSTREAM_SERVICES: Tuple[str, ...] = (
    "ts-route-service", "ts-price-service", "ts-station-service", "ts-train-service",
    "ts-seat-service", "ts-config-service", "ts-order-service", "ts-user-service",
    "ts-contacts-service", "ts-payment-service", "ts-food-service", "ts-security-service",
)
DOWNSTREAM_OPERATIONS: Tuple[str, ...] = (
    "getRouteByRouteId", "query", "queryForStationId", "queryForTrainType",
    "getLeftTicketOfInterval", "retrieve", "findById", "validate", "calculate", "update",
)

INFO_PHRASES: Tuple[str, ...] = (
    "Query returned {} rows in {} ms",
    "Cache lookup finished with {} entries",
    "Connection pool active size {}",
    "Request handled with status 200 in {} ms",
    "Loaded routing table version {}",
    "Serialized response of {} bytes",
    "Scheduled refresh in {} seconds",
    "Validated {} request parameters",
)
WARN_PHRASES: Tuple[str, ...] = (
    "Slow downstream response took {} ms",
    "Retry budget low with {} attempts left",
)
ERROR_PHRASES: Tuple[str, ...] = (
    "Failed to query route for trip {} after {} ms",
    "Station id {} not found in registry",
    "Price calculation failed for train type {}",
)


class FaultKind(str, Enum):
    STATUS_ERROR = "STATUS_ERROR"
    ERROR_LOG_ONLY = "ERROR_LOG_ONLY"
    LATENCY_INFLATION = "LATENCY_INFLATION"
    TRAFFIC_DROP = "TRAFFIC_DROP"


@dataclass(frozen=True)
class FaultSpec:
    """
    One injected fault

    target is an endpoint index into the scenario's catalog, None for all
    endpoints. intensity is the affected fraction of in-window target
    traffic (for TRAFFIC_DROP: the fraction removed).
    """
    kind: FaultKind
    target: Optional[int]
    window_start_min: float
    window_end_min: float
    intensity: float
    emits_alarm: bool = True

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "FaultSpec":
        try:
            return cls(
                kind=FaultKind(raw["kind"]),
                target=raw.get("target"),
                window_start_min=raw["window_start_min"],
                window_end_min=raw["window_end_min"],
                intensity=raw["intensity"],
                emits_alarm=raw.get("emits_alarm", True),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise InvalidScenario([f"faults: bad entry {raw!r} ({e})"])


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    seed: int = 0
    duration_minutes: int = 10
    qpm: int = 1000
    endpoints: int = 20
    zipf_s: float = 1.2
    pattern_variants: int = 16
    min_spans: int = 3
    max_spans: int = 30
    faults: Tuple[FaultSpec, ...] = ()
    blind_spot_fraction: float = 0.0
    start_ns: int = DEFAULT_START_NS

    def validate(self) -> List[str]:
        problems = []
        if self.duration_minutes < 1:
            problems.append("duration_minutes must be >= 1")
        if self.qpm < 1:
            problems.append("qpm must be >= 1")
        if self.endpoints < 1:
            problems.append("endpoints must be >= 1")
        if self.zipf_s <= 0:
            problems.append("zipf_s must be > 0")
        if self.pattern_variants < 1:
            problems.append("pattern_variants must be >= 1")
        if not 1 <= self.min_spans <= self.max_spans:
            problems.append("need 1 <= min_spans <= max_spans")
        if not 0.0 <= self.blind_spot_fraction <= 1.0:
            problems.append("blind_spot_fraction must be in [0, 1]")
        if self.start_ns < 0:
            problems.append("start_ns must be >= 0")
        for i, f in enumerate(self.faults):
            if not 0.0 < f.intensity <= 1.0:
                problems.append(f"faults[{i}].intensity must be in (0, 1]")
            if not 0 <= f.window_start_min < f.window_end_min <= self.duration_minutes:
                problems.append(f"faults[{i}] window must satisfy 0 <= start < end <= duration_minutes")
            if f.target is not None and not 0 <= f.target < self.endpoints:
                problems.append(f"faults[{i}].target must be in [0, {self.endpoints})")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["faults"] = [f.to_dict() for f in self.faults]
        return d

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ScenarioConfig":
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = sorted(k for k in raw if k not in cls.__dataclass_fields__ and not k.startswith("_comment"))
        if unknown:
            raise InvalidScenario([f"unknown field '{k}'" for k in unknown])
        known["faults"] = tuple(FaultSpec.from_dict(f) for f in raw.get("faults", ()))
        try:
            return cls(**known)
        except TypeError as e:
            raise InvalidScenario([str(e)])

    def window_ns(self, fault: FaultSpec) -> Tuple[int, int]:
        start = self.start_ns + int(round(fault.window_start_min * NS_PER_MINUTE))
        end = self.start_ns + int(round(fault.window_end_min * NS_PER_MINUTE))
        return start, end


@dataclass(frozen=True)
class GroundTruth:
    trace_id: str
    anomalous: bool
    fault: Optional[FaultKind]
    pattern_id: int
    path_id: int

    def to_record(self) -> Dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "anomalous": self.anomalous,
            "fault": self.fault.value if self.fault is not None else None,
            "pattern_id": self.pattern_id,
            "path_id": self.path_id,
        }


@dataclass
class GeneratedWorkload:
    scenario: ScenarioConfig
    span_records: List[Dict[str, Any]] = field(default_factory=list)
    alarm_records: List[Dict[str, Any]] = field(default_factory=list)
    truth: List[GroundTruth] = field(default_factory=list)

    SPANS_FILE = "spans.jsonl"
    ALARMS_FILE = "alarms.jsonl"
    TRUTH_FILE = "ground_truth.jsonl"

    @property
    def trace_count(self) -> int:
        return len(self.truth)

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out = Path(out_dir)
        paths = {
            "spans": out / self.SPANS_FILE,
            "alarms": out / self.ALARMS_FILE,
            "ground_truth": out / self.TRUTH_FILE,
        }
        write_records(paths["spans"], self.span_records)
        write_records(paths["alarms"], self.alarm_records)
        write_records(paths["ground_truth"], (t.to_record() for t in self.truth))
        return paths


# =========================================================================
# Catalog and variants
# =========================================================================

def endpoint_catalog(count: int) -> List[Tuple[str, str]]:
    """Entry endpoints in index order; past the table, operations get a suffix"""
    catalog = []
    for i in range(count):
        service, operation = ENTRY_ENDPOINTS[i % len(ENTRY_ENDPOINTS)]
        lap = i // len(ENTRY_ENDPOINTS)
        catalog.append((service, f"{operation}V{lap}" if lap else operation))
    return catalog


def zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** s
    return w / w.sum()


@dataclass(frozen=True)
class _NodeSpec:
    service: str
    operation: str
    parent: int
    share: float
    offset: float
    phrases: Tuple[int, ...]


@dataclass(frozen=True)
class _Variant:
    pattern_id: int
    nodes: Tuple[_NodeSpec, ...]
    base_factor: float


def _build_variant(rng: np.random.Generator, cfg: ScenarioConfig,
                   entry: Tuple[str, str], pattern_id: int) -> _Variant:
    size = int(rng.integers(cfg.min_spans, cfg.max_spans + 1))
    nodes = [_NodeSpec(entry[0], entry[1], -1, 1.0, 0.0,
                       tuple(int(p) for p in rng.integers(0, len(INFO_PHRASES), size=int(rng.integers(0, 3)))))]
    while len(nodes) < size:
        parent = int(rng.integers(0, len(nodes)))
        node = _NodeSpec(
            service=DOWNSTREAM_SERVICES[int(rng.integers(0, len(DOWNSTREAM_SERVICES)))],
            operation=DOWNSTREAM_OPERATIONS[int(rng.integers(0, len(DOWNSTREAM_OPERATIONS)))],
            parent=parent,
            share=float(rng.uniform(0.2, 0.8)),
            offset=float(rng.uniform(0.0, 1.0)),
            phrases=tuple(int(p) for p in rng.integers(0, len(INFO_PHRASES), size=int(rng.integers(0, 3)))),
        )
        nodes.append(node)
        # parallel fan-out: an identical sibling call
        if len(nodes) < size and rng.random() < FANOUT_PROBABILITY:
            nodes.append(_NodeSpec(node.service, node.operation, parent, node.share,
                                   float(rng.uniform(0.0, 1.0)), node.phrases))
    return _Variant(pattern_id, tuple(nodes), float(rng.uniform(0.9, 1.05)))


# =========================================================================
# Traffic
# =========================================================================

@dataclass
class _Draft:
    endpoint: int
    variant: int
    arrival: int
    dropped: bool = False
    fault: Optional[FaultKind] = None


def _draw_traffic(rng: np.random.Generator, cfg: ScenarioConfig) -> List[_Draft]:
    p_endpoint = zipf_weights(cfg.endpoints, cfg.zipf_s)
    p_variant = zipf_weights(cfg.pattern_variants, cfg.zipf_s)
    drafts: List[_Draft] = []
    for minute in range(cfg.duration_minutes):
        base = cfg.start_ns + minute * NS_PER_MINUTE
        endpoints = rng.choice(cfg.endpoints, size=cfg.qpm, p=p_endpoint)
        variants = rng.choice(cfg.pattern_variants, size=cfg.qpm, p=p_variant)
        offsets = rng.integers(0, NS_PER_MINUTE, size=cfg.qpm)
        for e, v, off in zip(endpoints, variants, offsets):
            drafts.append(_Draft(int(e), int(v), base + int(off)))
    drafts.sort(key=lambda d: d.arrival)
    return drafts


def _pick_exact(rng: np.random.Generator, eligible: List[_Draft], fraction: float) -> List[_Draft]:
    count = min(round_half_up(fraction * len(eligible)), len(eligible))
    if count == 0:
        return []
    chosen = rng.choice(len(eligible), size=count, replace=False)
    return [eligible[int(i)] for i in sorted(chosen)]


def _apply_faults(rng: np.random.Generator, cfg: ScenarioConfig, drafts: List[_Draft]) -> None:
    # drops first so symptom counts are taken over traffic that survives
    ordered = ([f for f in cfg.faults if f.kind == FaultKind.TRAFFIC_DROP]
               + [f for f in cfg.faults if f.kind != FaultKind.TRAFFIC_DROP])
    for fault in ordered:
        start, end = cfg.window_ns(fault)
        eligible = [d for d in drafts
                    if not d.dropped and d.fault is None and start <= d.arrival < end
                    and (fault.target is None or d.endpoint == fault.target)]
        hit = _pick_exact(rng, eligible, fault.intensity)
        for d in hit:
            if fault.kind == FaultKind.TRAFFIC_DROP:
                d.dropped = True
            else:
                d.fault = fault.kind
        logger.debug(f"Fault {fault.kind.value}: {len(hit)} of {len(eligible)} eligible traces")

    if cfg.blind_spot_fraction > 0:
        eligible = [d for d in drafts if not d.dropped and d.fault is None]
        for d in _pick_exact(rng, eligible, cfg.blind_spot_fraction):
            d.fault = FaultKind.ERROR_LOG_ONLY


# =========================================================================
# Materialization
# =========================================================================

def _fill(rng: np.random.Generator, phrase: str) -> str:
    values = [int(v) for v in rng.integers(1, 10000, size=phrase.count("{}"))]
    return phrase.format(*values)


def _materialize(rng: np.random.Generator, trace_id: str, draft: _Draft,
                 variant: _Variant, root_base_ns: int) -> List[Dict[str, Any]]:
    n = len(variant.nodes)
    starts = [0] * n
    durations = [0] * n
    for k, node in enumerate(variant.nodes):
        jitter = float(rng.lognormal(0.0, DURATION_SIGMA))
        if node.parent < 0:
            starts[k] = draft.arrival
            durations[k] = max(1, int(root_base_ns * variant.base_factor * jitter))
        else:
            p = node.parent
            durations[k] = max(0, min(durations[p], int(durations[p] * node.share * jitter)))
            starts[k] = starts[p] + int((durations[p] - durations[k]) * node.offset)

    statuses = ["OK"] * n
    extra_logs: Dict[int, List[Dict[str, Any]]] = {}
    if draft.fault == FaultKind.STATUS_ERROR:
        k = int(rng.integers(0, n))
        statuses[k] = "ERROR"
        extra_logs.setdefault(k, []).append({
            "ts_ns": starts[k] + durations[k] // 2, "level": "ERROR",
            "message": _fill(rng, ERROR_PHRASES[int(rng.integers(0, len(ERROR_PHRASES)))]),
        })
    elif draft.fault == FaultKind.ERROR_LOG_ONLY:
        extra_logs.setdefault(0, []).extend([
            {"ts_ns": starts[0] + durations[0] // 3, "level": "ERROR",
             "message": _fill(rng, ERROR_PHRASES[int(rng.integers(0, len(ERROR_PHRASES)))])},
            {"ts_ns": starts[0] + 2 * durations[0] // 3, "level": "WARN",
             "message": _fill(rng, WARN_PHRASES[int(rng.integers(0, len(WARN_PHRASES)))])},
        ])
    elif draft.fault == FaultKind.LATENCY_INFLATION:
        durations[0] = int(durations[0] * LATENCY_FACTOR)

    records = []
    for k, node in enumerate(variant.nodes):
        logs = []
        for i, phrase in enumerate(node.phrases):
            ts = starts[k] + durations[k] * (i + 1) // (len(node.phrases) + 1)
            logs.append({"ts_ns": ts, "level": "INFO", "message": _fill(rng, INFO_PHRASES[phrase])})
        logs.extend(extra_logs.get(k, ()))
        logs.sort(key=lambda log: log["ts_ns"])
        records.append({
            "trace_id": trace_id,
            "span_id": f"{k:04x}",
            "parent_span_id": None if node.parent < 0 else f"{node.parent:04x}",
            "service": node.service,
            "operation": node.operation,
            "start_ns": starts[k],
            "duration_ns": durations[k],
            "status": statuses[k],
            "logs": logs,
        })
    return records


def generate(cfg: ScenarioConfig) -> GeneratedWorkload:
    """
    Generate spans, alarms and ground truth for one scenario

    Raises:
        InvalidScenario: with one message per offending field
    """
    problems = cfg.validate()
    if problems:
        raise InvalidScenario(problems)

    rng = np.random.default_rng(cfg.seed)
    catalog = endpoint_catalog(cfg.endpoints)
    root_base = [int(rng.uniform(5e6, 200e6)) for _ in catalog]
    variants = [
        [_build_variant(rng, cfg, entry, e * cfg.pattern_variants + v) for v in range(cfg.pattern_variants)]
        for e, entry in enumerate(catalog)
    ]

    drafts = _draw_traffic(rng, cfg)
    _apply_faults(rng, cfg, drafts)

    workload = GeneratedWorkload(cfg)
    path_ids: Dict[int, int] = {}
    path_index: Dict[str, int] = {}
    index = 0
    for draft in drafts:
        if draft.dropped:
            continue
        trace_id = f"{cfg.name}-{cfg.seed}-{index:07d}"
        index += 1
        variant = variants[draft.endpoint][draft.variant]
        records = _materialize(rng, trace_id, draft, variant, root_base[draft.endpoint])
        workload.span_records.extend(records)

        if variant.pattern_id not in path_ids:
            trace = assemble_trace([span_from_record(r) for r in records])
            path_ids[variant.pattern_id] = path_index.setdefault(canonical_path(trace), len(path_index))
        workload.truth.append(GroundTruth(
            trace_id=trace_id,
            anomalous=draft.fault is not None,
            fault=draft.fault,
            pattern_id=variant.pattern_id,
            path_id=path_ids[variant.pattern_id],
        ))

    for fault in cfg.faults:
        if not fault.emits_alarm:
            continue
        start, end = cfg.window_ns(fault)
        targets = range(cfg.endpoints) if fault.target is None else [fault.target]
        endpoints = sorted(catalog[t] for t in targets)
        workload.alarm_records.append({
            "window_start_ns": start,
            "window_end_ns": end,
            "endpoints": [{"service": s, "operation": o} for s, o in sorted(set(endpoints))],
        })

    anomalous = sum(1 for t in workload.truth if t.anomalous)
    logger.info(f"Generated scenario '{cfg.name}' (seed {cfg.seed}): {workload.trace_count} traces, "
                f"{len(workload.span_records)} spans, {anomalous} anomalous, "
                f"{len(workload.alarm_records)} alarms")
    return workload


def preset_scenarios(seed: int = 0) -> Dict[str, ScenarioConfig]:
    """Named scenarios, each about 10k traces"""
    return {
        "steady": ScenarioConfig(name="steady", seed=seed),
        "blindspot": ScenarioConfig(
            name="blindspot", seed=seed,
            blind_spot_fraction=0.01,
            faults=(FaultSpec(FaultKind.ERROR_LOG_ONLY, target=1, window_start_min=4,
                              window_end_min=7, intensity=0.25),),
        ),
        "outage": ScenarioConfig(
            name="outage", seed=seed,
            faults=(
                FaultSpec(FaultKind.TRAFFIC_DROP, target=None, window_start_min=4,
                          window_end_min=6, intensity=0.5, emits_alarm=False),
                FaultSpec(FaultKind.STATUS_ERROR, target=0, window_start_min=4,
                          window_end_min=6, intensity=0.3),
            ),
        ),
        "latency": ScenarioConfig(
            name="latency", seed=seed,
            faults=(FaultSpec(FaultKind.LATENCY_INFLATION, target=2, window_start_min=5,
                              window_end_min=8, intensity=0.3),),
        ),
    }


def blind_spot_motif(trace_id: str = "blindspot-motif", start_ns: int = DEFAULT_START_NS) -> List[Dict[str, Any]]:
    """
    The five-span blind-spot trace: healthy statuses and latency, with the
    diagnostic ERROR/WARN logs (pre-templated 156, 203, 78) on the root span
    """
    def span(span_id, parent, service, operation, offset_ms, duration_ms, logs=()):
        return {
            "trace_id": trace_id,
            "span_id": span_id,
            "parent_span_id": parent,
            "service": service,
            "operation": operation,
            "start_ns": start_ns + offset_ms * 1_000_000,
            "duration_ns": duration_ms * 1_000_000,
            "status": "OK",
            "logs": list(logs),
        }

    ms = 1_000_000
    root_logs = [
        {"ts_ns": start_ns + 10 * ms, "level": "ERROR", "template_id": 156},
        {"ts_ns": start_ns + 20 * ms, "level": "ERROR", "template_id": 203},
        {"ts_ns": start_ns + 30 * ms, "level": "WARN", "template_id": 78},
    ]
    return [
        span("0001", None, "ts-basic-service", "queryForTravel", 0, 40, root_logs),
        span("0002", "0001", "ts-route-service", "getRouteByRouteId", 2, 12),
        span("0003", "0001", "ts-price-service", "query", 16, 14),
        span("0004", "0002", "ts-station-service", "queryForStationId", 4, 6),
        span("0005", "0003", "ts-train-service", "queryForTrainType", 18, 8),
    ]


def traces_by_minute(workload: GeneratedWorkload) -> Dict[int, int]:
    """Trace count per scenario minute, from root span starts"""
    counts: Dict[int, int] = {}
    for record in workload.span_records:
        if record["parent_span_id"] is None:
            minute = (record["start_ns"] - workload.scenario.start_ns) // NS_PER_MINUTE
            counts[minute] = counts.get(minute, 0) + 1
    return counts
