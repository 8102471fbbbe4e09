#!/usr/bin/env python3
"""
Sample quality evaluation

Intrinsic metrics of a sampled subset against its full corpus:

    api / path / pattern coverage   fraction of corpus endpoints, canonical
                                    paths and EPS patterns seen in the sample
    shannon_entropy_bits            entropy of the sample's pattern histogram
    proportion_anomaly / _rare      fraction of anomalous / rare-pattern traces
    bcr                             unique sampled patterns / sample size
    actual_rate                     sample size / corpus size

plus the uniform Random baseline and CSV / table output for comparisons.
"""

import csv
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Union

import numpy as np

from .errors import SinkWriteError, UnknownTraceId
from .quota_allocator import round_half_up
from .trace_encoder import AnomalyConfig, EventPairSet, TraceEncoder
from .trace_model import EndpointKey, Trace

logger = logging.getLogger(__name__)


def _label(trace: Trace, i: int) -> str:
    span = trace.spans[i]
    return f"{span.service}.{span.operation}"


def _subtree_path(trace: Trace, start: int, visited: Set[int]) -> str:
    # iterative post-order so deep call chains do not hit the recursion limit
    encoded: Dict[int, str] = {}
    stack = [(start, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            kids = sorted({encoded[c] for c in trace.children.get(node, ()) if c in encoded})
            label = _label(trace, node)
            encoded[node] = f"{label}({','.join(kids)})" if kids else label
            continue
        if node in visited:
            continue
        visited.add(node)
        stack.append((node, True))
        for child in trace.children.get(node, ()):
            if child not in visited:
                stack.append((child, False))
    return encoded[start]


def canonical_path(trace: Trace) -> str:
    """
    Call-tree encoding with sorted children and parallel duplicates removed

    Subtrees hanging off missing parents are appended after the root's
    encoding, sorted, separated by '|'.
    """
    visited: Set[int] = set()
    path = _subtree_path(trace, trace.root_index, visited)
    detached = sorted(_subtree_path(trace, i, visited)
                      for i in trace.orphan_indices
                      if i != trace.root_index and i not in visited)
    if detached:
        path = "|".join([path] + detached)
    return path


@dataclass(frozen=True)
class IndexEntry:
    endpoint: EndpointKey
    path: str
    pattern_id: int
    anomalous: bool
    truth_anomalous: Optional[bool] = None


@dataclass
class CorpusIndex:
    entries: Dict[str, IndexEntry] = field(default_factory=dict)
    pattern_counts: Counter = field(default_factory=Counter)
    path_counts: Counter = field(default_factory=Counter)
    endpoints: Set[EndpointKey] = field(default_factory=set)
    rare_max: int = 1

    def __len__(self) -> int:
        return len(self.entries)

    def is_rare(self, pattern_id: int) -> bool:
        return self.pattern_counts[pattern_id] <= self.rare_max

    @property
    def has_truth(self) -> bool:
        return any(e.truth_anomalous is not None for e in self.entries.values())


def default_rare_max(corpus_size: int) -> int:
    return max(1, math.floor(0.001 * corpus_size))


def build_index(traces: Sequence[Trace],
                cfg: Optional[AnomalyConfig] = None,
                ground_truth: Optional[Mapping[str, bool]] = None,
                rare_max: Optional[int] = None) -> CorpusIndex:
    """
    Index a corpus for metric computation

    Traces are encoded in arrival order; each trace's duration enters its
    group's baseline right after it is scored.

    Args:
        ground_truth: trace_id -> injected-anomaly label, optional
        rare_max: patterns seen at most this often are rare (default 0.1% of N, min 1)
    """
    cfg = cfg or AnomalyConfig()
    encoder = TraceEncoder(cfg)
    patterns: Dict[EventPairSet, int] = {}
    index = CorpusIndex()

    for trace in sorted(traces, key=lambda t: (t.arrival, t.trace_id)):
        if trace.trace_id in index.entries:
            logger.warning(f"Trace {trace.trace_id} appears twice in corpus; keeping first")
            continue
        enc = encoder.encode(trace)
        encoder.commit_durations([enc])
        pid = patterns.setdefault(enc.eps, len(patterns))
        path = canonical_path(trace)
        truth = ground_truth.get(trace.trace_id) if ground_truth is not None else None
        entry = IndexEntry(enc.endpoint, path, pid, enc.anomaly >= cfg.anomaly_threshold, truth)
        index.entries[trace.trace_id] = entry
        index.pattern_counts[pid] += 1
        index.path_counts[path] += 1
        index.endpoints.add(entry.endpoint)

    index.rare_max = rare_max if rare_max is not None else default_rare_max(len(index))
    logger.info(f"Indexed {len(index)} traces: {len(index.pattern_counts)} patterns, "
                f"{len(index.path_counts)} paths, {len(index.endpoints)} endpoints")
    return index


@dataclass
class MetricsReport:
    api_coverage: float
    path_coverage: float
    pattern_coverage: float
    shannon_entropy_bits: float
    proportion_anomaly: float
    proportion_rare: float
    bcr: float
    actual_rate: float
    sample_size: int
    corpus_size: int
    proportion_anomaly_truth: Optional[float] = None
    runtime_stats: Optional[Dict[str, Optional[float]]] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


METRIC_FIELDS = (
    "api_coverage", "path_coverage", "pattern_coverage", "shannon_entropy_bits",
    "proportion_anomaly", "proportion_rare", "bcr", "actual_rate",
)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def shannon_entropy(counts: Iterable[int]) -> float:
    values = np.array([c for c in counts if c > 0], dtype=float)
    if values.size == 0:
        return 0.0
    p = values / values.sum()
    return float(max(0.0, -(p * np.log2(p)).sum()))


def compute_metrics(index: CorpusIndex,
                    sample_ids: Iterable[str],
                    runtime: Optional[Dict[str, Optional[float]]] = None) -> MetricsReport:
    """
    Score one sample against an indexed corpus

    Raises:
        UnknownTraceId: a sampled id is not in the corpus
    """
    seen: Set[str] = set()
    sample: List[IndexEntry] = []
    for tid in sample_ids:
        entry = index.entries.get(tid)
        if entry is None:
            raise UnknownTraceId(tid)
        if tid in seen:
            logger.warning(f"Trace {tid} sampled twice; counted once")
            continue
        seen.add(tid)
        sample.append(entry)

    n = len(sample)
    pattern_hist = Counter(e.pattern_id for e in sample)
    truth_flags = [e.truth_anomalous for e in sample if e.truth_anomalous is not None]

    return MetricsReport(
        api_coverage=_ratio(len({e.endpoint for e in sample}), len(index.endpoints)),
        path_coverage=_ratio(len({e.path for e in sample}), len(index.path_counts)),
        pattern_coverage=_ratio(len(pattern_hist), len(index.pattern_counts)),
        shannon_entropy_bits=shannon_entropy(pattern_hist.values()),
        proportion_anomaly=_ratio(sum(1 for e in sample if e.anomalous), n),
        proportion_rare=_ratio(sum(1 for e in sample if index.is_rare(e.pattern_id)), n),
        bcr=_ratio(len(pattern_hist), n),
        actual_rate=_ratio(n, len(index)),
        sample_size=n,
        corpus_size=len(index),
        proportion_anomaly_truth=(_ratio(sum(truth_flags), n) if index.has_truth else None),
        runtime_stats=runtime,
    )


def random_sample(trace_ids: Sequence[str], rate: float, seed: int) -> List[str]:
    """Exactly round(rate*N) ids, uniform without replacement, in corpus order"""
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    n = len(trace_ids)
    k = min(round_half_up(rate * n), n)
    rng = np.random.default_rng(seed)
    picked = rng.choice(n, size=k, replace=False)
    return [trace_ids[i] for i in sorted(int(i) for i in picked)]


def parse_seed_spec(spec: str) -> List[int]:
    """'seed=7' -> [7]; 'seeds=0-9' -> [0..9]; 'seeds=1,4,9' -> [1, 4, 9]"""
    key, sep, value = spec.partition("=")
    if not sep or key.strip() not in ("seed", "seeds") or not value.strip():
        raise ValueError(f"bad seed spec '{spec}' (expected seed=N or seeds=A-B)")
    seeds: List[int] = []
    for part in value.split(","):
        part = part.strip()
        if "-" in part:
            lo, _, hi = part.partition("-")
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError(f"bad seed range '{part}'")
            seeds.extend(range(lo_i, hi_i + 1))
        else:
            seeds.append(int(part))
    return seeds


# =========================================================================
# Reporting
# =========================================================================

def compare_rows(results: Iterable[Any]) -> List[Dict[str, Any]]:
    """
    Flatten (sampler, rate, seed, report) tuples into CSV-ready rows
    """
    rows = []
    for sampler, rate, seed, report in results:
        row: Dict[str, Any] = {"sampler": sampler, "rate": rate, "seed": "" if seed is None else seed}
        for name in METRIC_FIELDS:
            row[name] = f"{getattr(report, name):.6f}"
        truth = report.proportion_anomaly_truth
        row["proportion_anomaly_truth"] = "" if truth is None else f"{truth:.6f}"
        row["sample_size"] = report.sample_size
        rows.append(row)
    return rows


CSV_FIELDS = ["sampler", "rate", "seed"] + list(METRIC_FIELDS) + ["proportion_anomaly_truth", "sample_size"]


def write_comparison_csv(path: Union[str, Path], rows: Sequence[Dict[str, Any]]) -> None:
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    except OSError as e:
        raise SinkWriteError(f"Cannot write {path}: {e}")


def format_table(reports: Mapping[str, MetricsReport]) -> str:
    """Aligned plain-text table, one row per named report"""
    columns = list(METRIC_FIELDS)
    if any(r.proportion_anomaly_truth is not None for r in reports.values()):
        columns.append("proportion_anomaly_truth")
    name_width = max([len("sampler")] + [len(n) for n in reports])
    widths = [max(len(c), 8) for c in columns]

    header = "sampler".ljust(name_width) + "  " + "  ".join(c.rjust(w) for c, w in zip(columns, widths))
    lines = [header, "-" * len(header)]
    for name, report in reports.items():
        cells = []
        for c, w in zip(columns, widths):
            value = getattr(report, c)
            cells.append(("-" if value is None else f"{value:.4f}").rjust(w))
        lines.append(name.ljust(name_width) + "  " + "  ".join(cells))
    return "\n".join(lines)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise mean of several runs (e.g. Random over many seeds)"""
    if not reports:
        raise ValueError("mean_report needs at least one report")
    n = len(reports)

    def avg(name: str) -> float:
        return sum(getattr(r, name) for r in reports) / n

    truths = [r.proportion_anomaly_truth for r in reports if r.proportion_anomaly_truth is not None]
    return MetricsReport(
        api_coverage=avg("api_coverage"),
        path_coverage=avg("path_coverage"),
        pattern_coverage=avg("pattern_coverage"),
        shannon_entropy_bits=avg("shannon_entropy_bits"),
        proportion_anomaly=avg("proportion_anomaly"),
        proportion_rare=avg("proportion_rare"),
        bcr=avg("bcr"),
        actual_rate=avg("actual_rate"),
        sample_size=round_half_up(avg("sample_size")),
        corpus_size=reports[0].corpus_size,
        proportion_anomaly_truth=(sum(truths) / len(truths) if truths else None),
    )
