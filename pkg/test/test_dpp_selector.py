import numpy as np
import pytest

from helpers import encoded

from libtailsampler.dpp_selector import (GAIN_FLOOR, SelectorConfig, SimilarityCache, build_kernel,
                                         cache_stats, fill_order, greedy_select, jaccard, log_det,
                                         quality_vector, top_anomaly_select)
from libtailsampler.errors import ConfigError
from libtailsampler.trace_encoder import EventPairSet


def _eps(*pairs):
    return EventPairSet.from_pairs(pairs)


def _candidates(pair_sets, anomalies=None):
    anomalies = anomalies or [0.0] * len(pair_sets)
    return [encoded(f"t{i:03d}", arrival=i, anomaly=a, pairs=p)
            for i, (p, a) in enumerate(zip(pair_sets, anomalies))]


def _random_pair_sets(rng, n, universe=14, max_size=6):
    seen = set()
    sets = []
    while len(sets) < n:
        size = int(rng.integers(1, max_size + 1))
        chosen = frozenset((int(x), int(x) + 1) for x in rng.choice(universe, size=size, replace=False))
        if chosen not in seen:
            seen.add(chosen)
            sets.append(sorted(chosen))
    return sets


def test_jaccard_values():
    p, q, r, s = (1, 2), (2, 3), (3, 4), (4, 5)
    assert jaccard(_eps(p, q), _eps(p, q)) == 1.0
    assert jaccard(_eps(p), _eps(q)) == 0.0
    assert jaccard(_eps(p, q, r), _eps(q, r, s)) == 0.5
    assert jaccard(_eps(), _eps()) == 1.0


def test_cache_counts_hits_and_misses():
    cache = SimilarityCache()
    assert cache_stats(cache)["hit_rate"] == 0.0
    a, b = _eps((1, 2), (2, 3)), _eps((2, 3), (3, 4))
    jaccard(a, b, cache)
    jaccard(b, a, cache)
    assert cache_stats(cache) == {"hits": 1, "misses": 1, "hit_rate": 0.5}
    assert cache_stats(None)["hits"] == 0


def test_cache_evicts_least_recently_used():
    cache = SimilarityCache(capacity=2)
    a, b, c = _eps((1, 2)), _eps((2, 3)), _eps((3, 4))
    cache.store(a, b, 0.1)
    cache.store(a, c, 0.2)
    assert cache.lookup(a, b) == 0.1
    cache.store(b, c, 0.3)
    assert len(cache) == 2
    assert cache.lookup(a, c) is None
    assert cache.lookup(b, a) == 0.1


def test_cache_digest_collision_is_a_miss():
    cache = SimilarityCache()
    a = EventPairSet(frozenset({(1, 2)}), 42)
    b = EventPairSet(frozenset({(3, 4)}), 7)
    impostor = EventPairSet(frozenset({(5, 6)}), 42)
    cache.store(a, b, 0.0)
    assert cache.lookup(impostor, b) is None
    assert jaccard(impostor, b, cache) == 0.0
    assert cache.lookup(impostor, b) == 0.0


def test_quality_is_bounded_and_monotone():
    q = quality_vector(_candidates([[(1, 2)]] * 3, [0.0, 2.0, 4.0]))
    assert q[0] == 1.0
    assert q[0] < q[1] < q[2] < 2.0
    assert list(quality_vector(_candidates([[(1, 2)]] * 2, [3.0, 9.0]), use_quality=False)) == [1.0, 1.0]


def test_k_one_takes_the_most_anomalous():
    cands = _candidates(_random_pair_sets(np.random.default_rng(1), 6), [1.0, 7.0, 3.0, 7.0, 0.0, 2.0])
    assert greedy_select(cands, 1, SelectorConfig()) == [1]


def test_k_one_is_invariant_under_anomaly_scaling():
    rng = np.random.default_rng(2)
    sets = _random_pair_sets(rng, 10)
    anomalies = [float(x) for x in rng.uniform(0, 10, size=10)]
    base = greedy_select(_candidates(sets, anomalies), 1, SelectorConfig())
    scaled = greedy_select(_candidates(sets, [3.5 * a for a in anomalies]), 1, SelectorConfig())
    assert base == scaled


def test_second_pick_is_the_dissimilar_one():
    near_a = [(i, i + 1) for i in range(1, 11)]
    near_b = [(i, i + 1) for i in range(1, 10)] + [(11, 13)]
    far = [(i, i + 1) for i in range(20, 30)]
    cands = _candidates([near_a, near_b, far])
    chosen = greedy_select(cands, 2, SelectorConfig())
    assert chosen == [0, 2]
    kernel = build_kernel(cands)
    assert log_det(kernel, chosen) > log_det(kernel, [0, 1])


def test_early_stop_fills_by_anomaly_then_arrival():
    same = [(1, 2), (2, 3)]
    cands = _candidates([same] * 4, [1.0, 5.0, 3.0, 5.0])
    steps = []
    chosen = greedy_select(cands, 3, SelectorConfig(), on_step=lambda *s: steps.append(s))
    assert chosen == [1, 3, 2]
    assert [s[1] for s in steps] == [1]


def test_quota_bounds():
    cands = _candidates(_random_pair_sets(np.random.default_rng(3), 5))
    assert greedy_select(cands, 0, SelectorConfig()) == []
    assert sorted(greedy_select(cands, 5, SelectorConfig())) == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        greedy_select(cands, 6, SelectorConfig())
    with pytest.raises(ValueError):
        top_anomaly_select(cands, -1)


def test_top_anomaly_select_follows_fill_order():
    cands = _candidates([[(1, 2)], [(2, 3)], [(3, 4)]], [2.0, 9.0, 2.0])
    assert fill_order(cands) == [1, 0, 2]
    assert top_anomaly_select(cands, 2) == [1, 0]


def test_cache_does_not_change_selection():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(5, 25))
        cands = _candidates(_random_pair_sets(rng, n), [float(x) for x in rng.integers(0, 6, size=n)])
        k = int(rng.integers(1, n + 1))
        cfg = SelectorConfig()
        assert greedy_select(cands, k, cfg, SimilarityCache()) == greedy_select(cands, k, cfg, None)


def _set_jaccard(a, b):
    a, b = set(map(tuple, a)), set(map(tuple, b))
    return len(a & b) / len(a | b)


def _naive_greedy(pair_sets, anomalies, k):
    """Full determinant recompute per step, same tie and fill rules"""
    n = len(pair_sets)
    top = max(anomalies)
    q = np.array([1.0 + a / (1.0 + top) for a in anomalies])
    sims = np.array([[_set_jaccard(pair_sets[i], pair_sets[j]) for j in range(n)] for i in range(n)])
    kernel = q[:, None] * sims * q[None, :]
    fill = sorted(range(n), key=lambda i: (-anomalies[i], i, f"t{i:03d}"))
    rank = {i: r for r, i in enumerate(fill)}

    chosen = []
    prev = 1.0
    while len(chosen) < k:
        best, best_gain, best_det = None, None, None
        for j in range(n):
            if j in chosen:
                continue
            idx = chosen + [j]
            det = float(np.linalg.det(kernel[np.ix_(idx, idx)]))
            gain = det / prev
            if gain < GAIN_FLOOR:
                continue
            if best is None or gain > best_gain or (gain == best_gain and rank[j] < rank[best]):
                best, best_gain, best_det = j, gain, det
        if best is None:
            break
        chosen.append(best)
        prev = best_det
    for i in fill:
        if len(chosen) == k:
            break
        if i not in chosen:
            chosen.append(i)
    return chosen


def test_greedy_matches_naive_recompute():
    rng = np.random.default_rng(2024)
    cfg = SelectorConfig(epsilon=0.0)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        sets = _random_pair_sets(rng, n)
        anomalies = [float(x) for x in rng.uniform(0, 10, size=n)]
        k = int(rng.integers(1, n + 1))
        expected = _naive_greedy(sets, anomalies, k)
        assert greedy_select(_candidates(sets, anomalies), k, cfg, SimilarityCache()) == expected


def test_greedy_beats_random_subsets():
    rng = np.random.default_rng(99)
    wins = 0
    for _ in range(100):
        cands = _candidates(_random_pair_sets(rng, 30, universe=40, max_size=8),
                            [float(x) for x in rng.uniform(0, 5, size=30)])
        kernel = build_kernel(cands)
        chosen = greedy_select(cands, 5, SelectorConfig(epsilon=0.0))
        other = [int(i) for i in rng.choice(30, size=5, replace=False)]
        if log_det(kernel, chosen) >= log_det(kernel, other):
            wins += 1
    assert wins >= 95


def test_kernel_is_symmetric_with_quality_diagonal():
    cands = _candidates(_random_pair_sets(np.random.default_rng(8), 6), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    kernel = build_kernel(cands)
    assert np.allclose(kernel, kernel.T)
    assert np.allclose(np.diag(kernel), quality_vector(cands) ** 2)
    assert np.all(np.linalg.eigvalsh(kernel) > -1e-9)


def test_selector_config_validation():
    with pytest.raises(ConfigError):
        SelectorConfig(epsilon=-1.0)
    with pytest.raises(ConfigError):
        SelectorConfig(cache_capacity=0)
