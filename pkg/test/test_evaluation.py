import csv
import math
from collections import Counter

import numpy as np
import pytest

from helpers import MS, make_trace, span, tlog

from libtailsampler.errors import UnknownTraceId
from libtailsampler.evaluation import (CSV_FIELDS, METRIC_FIELDS, MetricsReport, build_index,
                                       canonical_path, compare_rows, compute_metrics,
                                       default_rare_max, format_table, mean_report, parse_seed_spec,
                                       random_sample, shannon_entropy, write_comparison_csv)
from libtailsampler.trace_model import SpanStatus, assemble_trace

CHILD_POOL = [("svc-b", "get"), ("svc-c", "get"), ("svc-d", "put"), ("svc-e", "list")]
ROOT_POOL = [("gw", "a"), ("gw", "b"), ("gw", "c")]


def test_canonical_path_sorts_and_dedupes_children():
    trace = make_trace("t", root=("gw", "a"), children=[("svc-c", "get"), ("svc-b", "get"), ("svc-c", "get")])
    assert canonical_path(trace) == "gw.a(svc-b.get,svc-c.get)"
    assert canonical_path(make_trace("u", root=("gw", "a"))) == "gw.a"


def test_canonical_path_nests_grandchildren():
    spans = [
        span("t", "r", None, "gw", "a", start=0),
        span("t", "x", "r", "svc-b", "get", start=1),
        span("t", "y", "x", "db", "query", start=2),
        span("t", "z", "r", "svc-c", "get", start=3),
    ]
    assert canonical_path(assemble_trace(spans)) == "gw.a(svc-b.get(db.query),svc-c.get)"


def test_canonical_path_appends_detached_subtrees():
    spans = [
        span("t", "r", None, "gw", "a", start=0),
        span("t", "x", "gone-2", "svc-c", "get", start=5),
        span("t", "y", "gone-1", "svc-b", "get", start=4),
    ]
    assert canonical_path(assemble_trace(spans)) == "gw.a|svc-b.get|svc-c.get"


def test_shannon_entropy():
    assert shannon_entropy([5, 5, 5, 5]) == pytest.approx(2.0)
    assert shannon_entropy([7]) == 0.0
    assert shannon_entropy([]) == 0.0
    assert shannon_entropy([0, 3]) == 0.0


def test_full_sample_has_full_coverage():
    traces = [make_trace(f"t{i}", start=i * MS, root=ROOT_POOL[i % 3], children=[CHILD_POOL[i % 4]])
              for i in range(24)]
    index = build_index(traces)
    report = compute_metrics(index, [t.trace_id for t in traces])
    assert report.api_coverage == 1.0
    assert report.path_coverage == 1.0
    assert report.pattern_coverage == 1.0
    assert report.actual_rate == 1.0
    assert report.bcr == pytest.approx(12 / 24)
    assert report.proportion_anomaly_truth is None


def test_four_equal_patterns_give_two_bits():
    traces = [make_trace(f"t{i}", start=i * MS, children=[CHILD_POOL[i % 4]]) for i in range(8)]
    report = compute_metrics(build_index(traces), [t.trace_id for t in traces])
    assert report.shannon_entropy_bits == pytest.approx(2.0)
    assert report.bcr == 0.5


def test_unknown_sampled_id_is_an_error():
    index = build_index([make_trace("t0")])
    with pytest.raises(UnknownTraceId) as err:
        compute_metrics(index, ["t0", "nope"])
    assert err.value.trace_id == "nope"


def test_duplicate_sampled_ids_count_once():
    traces = [make_trace(f"t{i}", start=i) for i in range(4)]
    report = compute_metrics(build_index(traces), ["t1", "t1", "t2"])
    assert report.sample_size == 2
    assert report.actual_rate == 0.5


def test_empty_sample():
    report = compute_metrics(build_index([make_trace("t0")]), [])
    assert report.sample_size == 0
    assert report.api_coverage == 0.0
    assert report.bcr == 0.0


def test_ground_truth_is_reported_when_given():
    traces = [make_trace(f"t{i}", start=i) for i in range(4)]
    index = build_index(traces, ground_truth={"t0": True, "t1": False, "t2": False, "t3": False})
    assert index.has_truth
    assert compute_metrics(index, ["t0", "t1"]).proportion_anomaly_truth == 0.5


def test_default_rare_max():
    assert default_rare_max(10) == 1
    assert default_rare_max(1000) == 1
    assert default_rare_max(25_000) == 25


def _random_corpus(rng, n):
    """Traces plus the pattern / path / endpoint / anomaly keys they must map to"""
    traces, keys = [], {}
    for i in range(n):
        root = ROOT_POOL[int(rng.integers(0, len(ROOT_POOL)))]
        children = [CHILD_POOL[int(c)] for c in rng.integers(0, len(CHILD_POOL), size=int(rng.integers(0, 4)))]
        log_ids = sorted(int(x) for x in rng.choice(np.arange(1, 6), size=int(rng.integers(0, 3)), replace=False))
        logs = [tlog(i * MS + k + 1, "INFO", tid) for k, tid in enumerate(log_ids)]
        status = SpanStatus.ERROR if rng.random() < 0.15 else SpanStatus.OK
        tid = f"t{i:04d}"
        traces.append(make_trace(tid, start=i * MS, root=root, children=children,
                                 root_status=status, root_logs=logs))

        kids = sorted({f"{s}.{o}" for s, o in children})
        label = f"{root[0]}.{root[1]}"
        keys[tid] = {
            "pattern": (root, frozenset(children), tuple(log_ids), status),
            "path": f"{label}({','.join(kids)})" if kids else label,
            "endpoint": root,
            "anomalous": status == SpanStatus.ERROR,
        }
    return traces, keys


def _naive_metrics(keys, sample_ids):
    corpus_patterns = Counter(k["pattern"] for k in keys.values())
    rare_max = max(1, math.floor(0.001 * len(keys)))
    sample = [keys[t] for t in sample_ids]
    hist = Counter(k["pattern"] for k in sample)
    n = len(sample)
    total = sum(hist.values())
    entropy = -sum(c / total * math.log2(c / total) for c in hist.values()) if total else 0.0
    return {
        "api_coverage": len({k["endpoint"] for k in sample}) / len({k["endpoint"] for k in keys.values()}),
        "path_coverage": len({k["path"] for k in sample}) / len({k["path"] for k in keys.values()}),
        "pattern_coverage": len(hist) / len(corpus_patterns),
        "shannon_entropy_bits": entropy,
        "proportion_anomaly": sum(k["anomalous"] for k in sample) / n,
        "proportion_rare": sum(corpus_patterns[k["pattern"]] <= rare_max for k in sample) / n,
        "bcr": len(hist) / n,
        "actual_rate": n / len(keys),
    }


def test_metrics_match_brute_force_recount():
    rng = np.random.default_rng(31)
    for _ in range(50):
        n = int(rng.integers(5, 80))
        traces, keys = _random_corpus(rng, n)
        index = build_index(traces)
        ids = [t.trace_id for t in traces]
        picked = [ids[int(i)] for i in rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)]

        report = compute_metrics(index, picked)
        expected = _naive_metrics(keys, picked)
        for name in METRIC_FIELDS:
            assert getattr(report, name) == pytest.approx(expected[name]), name


def test_coverage_grows_with_the_sample():
    rng = np.random.default_rng(32)
    traces, _ = _random_corpus(rng, 60)
    index = build_index(traces)
    ids = [t.trace_id for t in traces]
    smaller = compute_metrics(index, ids[:20])
    larger = compute_metrics(index, ids[:40])
    assert larger.api_coverage >= smaller.api_coverage
    assert larger.path_coverage >= smaller.path_coverage
    assert larger.pattern_coverage >= smaller.pattern_coverage


def test_random_sample_size_and_order():
    ids = [f"t{i:05d}" for i in range(10_000)]
    picked = random_sample(ids, 0.05, seed=3)
    assert len(picked) == 500
    assert len(set(picked)) == 500
    assert picked == sorted(picked)
    assert random_sample(ids, 0.05, seed=3) == picked
    assert random_sample(ids, 0.05, seed=4) != picked
    assert random_sample(ids[:40], 1.0, seed=0) == ids[:40]


@pytest.mark.parametrize("rate", [0.0, -0.1, 1.5])
def test_random_sample_rejects_bad_rates(rate):
    with pytest.raises(ValueError):
        random_sample(["a", "b"], rate, seed=0)


def test_random_sample_is_uniform():
    ids = [f"t{i}" for i in range(200)]
    seeds = 1000
    hits = Counter()
    for seed in range(seeds):
        hits.update(random_sample(ids, 0.1, seed))
    expected = seeds * 0.1
    sigma = math.sqrt(seeds * 0.1 * 0.9)
    inside = sum(1 for tid in ids if abs(hits[tid] - expected) <= 3 * sigma)
    assert inside >= 0.99 * len(ids)


def test_parse_seed_spec():
    assert parse_seed_spec("seed=7") == [7]
    assert parse_seed_spec("seeds=0-4") == [0, 1, 2, 3, 4]
    assert parse_seed_spec("seeds=1,4,9") == [1, 4, 9]
    assert parse_seed_spec("seeds=0-1,5") == [0, 1, 5]


@pytest.mark.parametrize("spec", ["7", "seed=", "count=3", "seeds=5-2", "seeds=a"])
def test_parse_seed_spec_rejects(spec):
    with pytest.raises(ValueError):
        parse_seed_spec(spec)


def _report(value, truth=None):
    return MetricsReport(value, value, value, value, value, value, value, value,
                         sample_size=10, corpus_size=100, proportion_anomaly_truth=truth)


def test_comparison_csv(tmp_path):
    rows = compare_rows([("full", 0.05, None, _report(0.5)), ("random", 0.05, 3, _report(0.25, truth=0.1))])
    path = tmp_path / "out" / "comparison.csv"
    write_comparison_csv(path, rows)
    with path.open(newline="") as fh:
        read = list(csv.DictReader(fh))
    assert list(read[0]) == CSV_FIELDS
    assert read[0]["sampler"] == "full" and read[0]["seed"] == ""
    assert read[0]["pattern_coverage"] == "0.500000"
    assert read[1]["proportion_anomaly_truth"] == "0.100000"


def test_format_table_lists_every_sampler():
    table = format_table({"full": _report(0.5), "random": _report(0.25)})
    lines = table.splitlines()
    assert lines[0].startswith("sampler")
    assert "proportion_anomaly_truth" not in lines[0]
    assert lines[2].startswith("full") and "0.5000" in lines[2]
    assert lines[3].startswith("random") and "0.2500" in lines[3]


def test_mean_report():
    mean = mean_report([_report(0.2, truth=0.1), _report(0.4, truth=0.3)])
    assert mean.bcr == pytest.approx(0.3)
    assert mean.proportion_anomaly_truth == pytest.approx(0.2)
    assert mean.sample_size == 10
    with pytest.raises(ValueError):
        mean_report([])
