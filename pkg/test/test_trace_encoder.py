import dataclasses
from pathlib import Path

import numpy as np
import pytest

from helpers import MS, make_trace, span, tlog

from libtailsampler.errors import ConfigError
from libtailsampler.log_templater import EventKind, EventManager, TemplateStore
from libtailsampler.trace_encoder import (AnomalyConfig, EventPairSet, GroupStats, TraceEncoder,
                                          anomaly_score, canonical_event_sequence, encode,
                                          update_group_stats)
from libtailsampler.trace_model import (LogEvent, LogLevel, SpanStatus, assemble_trace,
                                        span_from_record)
from libtailsampler.workload_gen import blind_spot_motif

GOLDEN = Path(__file__).parent / "golden"


def _warm_stats(durations, capacity=1000):
    stats = GroupStats(capacity=capacity)
    for d in durations:
        stats.observe(d)
    return stats


def test_blind_spot_motif_matches_golden_pairs():
    trace = assemble_trace([span_from_record(r) for r in blind_spot_motif()])
    mgr = EventManager()
    enc = encode(trace, mgr, None, AnomalyConfig())

    lines = [f"{mgr.label(a)} -> {mgr.label(b)}" for a, b in enc.eps.sorted_pairs()]
    golden = (GOLDEN / "blind_spot_motif_pairs.txt").read_text(encoding="utf-8")
    assert "\n".join(lines) + "\n" == golden
    # two ERROR logs and one WARN log, healthy statuses, no baseline yet
    assert enc.anomaly == 5.0
    assert not enc.degraded


def test_root_event_sequence_of_motif():
    trace = assemble_trace([span_from_record(r) for r in blind_spot_motif()])
    mgr = EventManager()
    seq = canonical_event_sequence(trace.root, mgr)
    assert [mgr.label(e) for e in seq] == [
        "SPAN_START:ts-basic-service/queryForTravel",
        "LOG:ext:156", "LOG:ext:203", "LOG:ext:78",
        "SPAN_END:ts-basic-service/queryForTravel",
    ]


def test_sequence_places_status_and_degradation_before_end():
    mgr = EventManager()
    s = span("t", "a", status=SpanStatus.ERROR, logs=[tlog(5, "INFO", 9)])
    seq = canonical_event_sequence(s, mgr, degraded=True)
    assert [mgr.describe(e)[0] for e in seq] == [
        EventKind.SPAN_START, EventKind.LOG, EventKind.STATUS_ERROR,
        EventKind.PERF_DEG, EventKind.SPAN_END,
    ]


def test_log_ties_ordered_by_template_id():
    mgr = EventManager()
    s = span("t", "a", logs=[tlog(5, "INFO", 9), tlog(5, "INFO", 4)])
    seq = canonical_event_sequence(s, mgr)
    assert [mgr.label(e) for e in seq[1:3]] == ["LOG:ext:4", "LOG:ext:9"]


def test_raw_messages_need_a_template_store():
    mgr = EventManager()
    s = span("t", "a", logs=[LogEvent(5, LogLevel.INFO, message="Validated 3 request parameters")])
    with pytest.raises(ValueError):
        canonical_event_sequence(s, mgr)
    seq = canonical_event_sequence(s, mgr, templates=TemplateStore())
    assert len(seq) == 3


def test_parallel_duplicate_children_collapse():
    mgr = EventManager()
    cfg = AnomalyConfig()
    one = make_trace("t1", children=[("svc-b", "get")])
    two = make_trace("t2", children=[("svc-b", "get"), ("svc-b", "get")])
    assert encode(one, mgr, None, cfg).eps == encode(two, mgr, None, cfg).eps


def test_structure_changes_the_pattern():
    mgr = EventManager()
    cfg = AnomalyConfig()
    a = encode(make_trace("t1", children=[("svc-b", "get")]), mgr, None, cfg)
    b = encode(make_trace("t2", children=[("svc-c", "get")]), mgr, None, cfg)
    assert a.eps != b.eps


def test_logs_can_be_left_out():
    cfg = AnomalyConfig(include_logs=False)
    trace = make_trace("t", root_logs=[tlog(1, "ERROR", 3), tlog(2, "WARN", 4)])
    mgr = EventManager()
    enc = encode(trace, mgr, None, cfg)
    assert enc.anomaly == 0.0
    assert all(mgr.describe(e)[0] != EventKind.LOG for pair in enc.eps.pairs for e in pair)


def test_event_pair_set_is_order_independent():
    a = EventPairSet.from_pairs([(1, 2), (2, 3), (3, 4)])
    b = EventPairSet.from_pairs([(3, 4), (1, 2), (2, 3)])
    assert a == b and hash(a) == hash(b)
    assert a != EventPairSet.from_pairs([(1, 2)])
    assert len(a) == 3


def test_p90_is_exact_nearest_rank():
    assert _warm_stats(range(1, 11)).p90 == 9
    assert _warm_stats(range(1, 21)).p90 == 18
    assert _warm_stats([5]).p90 == 5


def test_duration_window_evicts_oldest():
    stats = _warm_stats([1, 2, 3, 100], capacity=3)
    assert list(stats.duration_window) == [2, 3, 100]
    assert stats.p90 == 100
    update_group_stats(stats, 1)
    assert list(stats.duration_window) == [3, 100, 1]


def test_latency_term_needs_a_warm_group():
    cfg = AnomalyConfig()
    slow = make_trace("t", duration=500 * MS)
    cold = _warm_stats([100 * MS] * 19)
    assert anomaly_score(slow, cold, cfg) == 0.0
    warm = update_group_stats(cold, 100 * MS)
    assert anomaly_score(slow, warm, cfg) == cfg.perf_score
    # exactly at the threshold is not degraded
    edge = make_trace("t", duration=120 * MS)
    assert anomaly_score(edge, warm, cfg) == 0.0


def test_degraded_root_adds_perf_event():
    cfg = AnomalyConfig()
    stats = _warm_stats([100 * MS] * 30)
    mgr = EventManager()
    fast = encode(make_trace("a", duration=100 * MS), mgr, stats, cfg)
    slow = encode(make_trace("b", duration=400 * MS), mgr, stats, cfg)
    assert slow.degraded and not fast.degraded
    assert slow.eps != fast.eps
    perf = mgr.event_id(EventKind.PERF_DEG, "svc-a/op")
    assert any(perf in pair for pair in slow.eps.pairs)


def test_encoder_scores_against_committed_baseline_only():
    cfg = AnomalyConfig(min_observations=1)
    encoder = TraceEncoder(cfg)
    first = encoder.encode(make_trace("a", duration=100 * MS))
    assert len(encoder.stats_for(first.endpoint)) == 0
    encoder.commit_durations([first])
    slow = encoder.encode(make_trace("b", duration=200 * MS))
    assert slow.degraded
    assert slow.anomaly == cfg.perf_score


def test_anomaly_config_validation():
    with pytest.raises(ConfigError):
        AnomalyConfig(w_err=-1)
    with pytest.raises(ConfigError):
        AnomalyConfig(perf_factor=1.0)
    with pytest.raises(ConfigError):
        AnomalyConfig(window_capacity=0)


def _naive_score(trace, durations, cfg):
    errors = sum(1 for s in trace.spans if s.status == SpanStatus.ERROR)
    warns = sum(1 for s in trace.spans for log in s.logs if log.level == LogLevel.WARN)
    errlogs = sum(1 for s in trace.spans for log in s.logs if log.level == LogLevel.ERROR)
    score = 5 * errors + 1 * warns + 2 * errlogs
    window = durations[-cfg.window_capacity:]
    if len(window) >= 20:
        ordered = sorted(window)
        p90 = ordered[-(-9 * len(ordered) // 10) - 1]
        if trace.end_to_end_duration > 1.2 * p90:
            score += 3
    return score


def test_anomaly_score_matches_naive_recount():
    rng = np.random.default_rng(11)
    cfg = AnomalyConfig()
    levels = ["DEBUG", "INFO", "WARN", "ERROR"]
    durations = []
    stats = GroupStats(capacity=cfg.window_capacity)

    for n in range(1000):
        spans = []
        size = int(rng.integers(1, 8))
        for k in range(size):
            logs = [tlog(int(rng.integers(0, 1000)), levels[int(rng.integers(0, 4))], int(rng.integers(1, 20)))
                    for _ in range(int(rng.integers(0, 4)))]
            status = SpanStatus.ERROR if rng.random() < 0.1 else SpanStatus.OK
            parent = None if k == 0 else f"s{int(rng.integers(0, k))}"
            duration = int(rng.integers(50, 150)) * MS if k == 0 else MS
            spans.append(span(f"t{n}", f"s{k}", parent, start=k, duration=duration,
                              status=status, logs=logs))
        trace = assemble_trace(spans)

        assert anomaly_score(trace, stats, cfg) == _naive_score(trace, durations, cfg)

        stats.observe(trace.end_to_end_duration)
        durations.append(trace.end_to_end_duration)


def _random_tree(rng, trace_id, size):
    spans = [span(trace_id, "s0", None, service="svc-root", start=0, duration=100 * MS)]
    for k in range(1, size):
        parent = f"s{int(rng.integers(0, k))}"
        spans.append(span(trace_id, f"s{k}", parent, service=f"svc-{int(rng.integers(0, 4))}",
                          start=int(rng.integers(1, 50)) * MS, duration=MS,
                          logs=[tlog(k, "INFO", int(rng.integers(1, 5)))]))
    return spans


@pytest.mark.parametrize("level, weight", [("ERROR", "w_le"), ("WARN", "w_lw")])
def test_each_added_log_raises_the_score_by_its_weight(level, weight):
    rng = np.random.default_rng(3)
    cfg = AnomalyConfig(w_lw=0.75, w_le=2.5)
    stats = _warm_stats([100 * MS] * 30)
    for n in range(200):
        spans = _random_tree(rng, f"t{n}", int(rng.integers(1, 8)))
        before = anomaly_score(assemble_trace(spans), stats, cfg)
        k = int(rng.integers(0, len(spans)))
        spans[k] = dataclasses.replace(spans[k], logs=spans[k].logs + (tlog(999, level, 7),))
        after = anomaly_score(assemble_trace(spans), stats, cfg)
        assert after == pytest.approx(before + getattr(cfg, weight))


def test_sibling_start_times_do_not_change_the_pattern():
    rng = np.random.default_rng(8)
    cfg = AnomalyConfig()
    mgr = EventManager()
    for n in range(200):
        spans = _random_tree(rng, f"t{n}", int(rng.integers(2, 10)))
        original = encode(assemble_trace(spans), mgr, None, cfg).eps

        by_parent = {}
        for i, s in enumerate(spans):
            if s.parent_span_id is not None:
                by_parent.setdefault(s.parent_span_id, []).append(i)
        shuffled = list(spans)
        for siblings in by_parent.values():
            starts = [spans[i].start for i in siblings]
            for i, start in zip(siblings, rng.permutation(starts)):
                shuffled[i] = dataclasses.replace(spans[i], start=int(start))
        assert encode(assemble_trace(shuffled), mgr, None, cfg).eps == original
