#!/usr/bin/env python3
"""
DPP Selector

Per-group subset selection with a quality/diversity kernel

    L_ij = q_i * J(E_i, E_j) * q_j,    q_i = 1 + A_i / (1 + max_j A_j)

and the fast greedy MAP algorithm (incremental Cholesky): each step adds the
candidate with the largest conditional variance d_j^2, which equals
det(L[S+j]) / det(L[S]). Selection stops early when the best d_j^2 drops
below epsilon; the remaining slots are filled by anomaly (desc), arrival,
trace_id so a group always returns exactly its quota.

Kernel rows are computed lazily against the chosen item only, once per
distinct pattern, through a process-wide LRU cache of Jaccard values keyed
by the two EPS digests.
"""

import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .trace_encoder import EncodedTrace, EventPairSet

logger = logging.getLogger(__name__)

GAIN_FLOOR = 1e-12


@dataclass(frozen=True)
class SelectorConfig:
    epsilon: float = 1e-3
    cache_capacity: int = 1 << 20
    use_quality: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("selector.epsilon must be >= 0")
        if self.cache_capacity < 1:
            raise ConfigError("selector.cache_capacity must be >= 1")


class SimilarityCache:
    """
    LRU cache of Jaccard similarities keyed by (min digest, max digest)

    Entries keep the two sets they were computed for; a lookup whose sets
    differ (digest collision) is treated as a miss and recomputed.
    """

    def __init__(self, capacity: int = 1 << 20):
        self.capacity = capacity
        self._entries: "OrderedDict[Tuple[int, int], Tuple[EventPairSet, EventPairSet, float]]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def _key(a: EventPairSet, b: EventPairSet) -> Tuple[int, int]:
        return (a.hash64, b.hash64) if a.hash64 <= b.hash64 else (b.hash64, a.hash64)

    def lookup(self, a: EventPairSet, b: EventPairSet) -> Optional[float]:
        key = self._key(a, b)
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                x, y, value = entry
                if (x == a and y == b) or (x == b and y == a):
                    self._entries.move_to_end(key)
                    self.hits += 1
                    return value
            self.misses += 1
            return None

    def store(self, a: EventPairSet, b: EventPairSet, value: float) -> None:
        key = self._key(a, b)
        with self._lock:
            self._entries[key] = (a, b, value)
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def __len__(self) -> int:
        return len(self._entries)


def cache_stats(cache: Optional[SimilarityCache]) -> Dict[str, float]:
    if cache is None:
        return {"hits": 0, "misses": 0, "hit_rate": 0.0}
    lookups = cache.hits + cache.misses
    return {
        "hits": cache.hits,
        "misses": cache.misses,
        "hit_rate": cache.hits / lookups if lookups else 0.0,
    }


def _raw_jaccard(a: EventPairSet, b: EventPairSet) -> float:
    if not a.pairs and not b.pairs:
        return 1.0
    inter = len(a.pairs & b.pairs)
    return inter / (len(a.pairs) + len(b.pairs) - inter)


def jaccard(a: EventPairSet, b: EventPairSet, cache: Optional[SimilarityCache] = None) -> float:
    if a == b:
        return 1.0
    if cache is None:
        return _raw_jaccard(a, b)
    value = cache.lookup(a, b)
    if value is None:
        value = _raw_jaccard(a, b)
        cache.store(a, b, value)
    return value


def quality_vector(candidates: Sequence[EncodedTrace], use_quality: bool = True) -> np.ndarray:
    if not use_quality:
        return np.ones(len(candidates))
    scores = np.array([c.anomaly for c in candidates], dtype=float)
    if scores.size == 0:
        return scores
    return 1.0 + scores / (1.0 + scores.max())


def fill_order(candidates: Sequence[EncodedTrace]) -> List[int]:
    """Indices by anomaly desc, arrival asc, trace_id asc"""
    return sorted(range(len(candidates)),
                  key=lambda i: (-candidates[i].anomaly, candidates[i].arrival, candidates[i].trace_id))


class _KernelRows:
    """Lazy kernel rows over the distinct patterns of a candidate list"""

    def __init__(self, candidates: Sequence[EncodedTrace], quality: np.ndarray,
                 cache: Optional[SimilarityCache]):
        self.quality = quality
        self.cache = cache
        index: Dict[EventPairSet, int] = {}
        inverse = []
        for c in candidates:
            slot = index.get(c.eps)
            if slot is None:
                slot = index[c.eps] = len(index)
            inverse.append(slot)
        self.patterns = list(index)
        self.inverse = np.array(inverse, dtype=np.intp)

    def row(self, j: int) -> np.ndarray:
        eps_j = self.patterns[self.inverse[j]]
        sims = np.array([jaccard(eps_j, p, self.cache) for p in self.patterns], dtype=float)
        return self.quality[j] * sims[self.inverse] * self.quality


StepCallback = Callable[[int, int, float], None]


def greedy_select(candidates: Sequence[EncodedTrace],
                  k: int,
                  cfg: SelectorConfig,
                  cache: Optional[SimilarityCache] = None,
                  on_step: Optional[StepCallback] = None) -> List[int]:
    """
    Pick exactly k candidate indices

    Args:
        on_step: called as (step, index, marginal_gain) for every greedy pick

    Returns:
        greedy picks in order, followed by fill-order picks after an early stop
    """
    n = len(candidates)
    if k < 0 or k > n:
        raise ValueError(f"quota {k} outside [0, {n}]")
    if k == 0:
        return []

    order = fill_order(candidates)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    quality = quality_vector(candidates, cfg.use_quality)
    rows = _KernelRows(candidates, quality, cache)

    di2 = quality ** 2
    cis = np.zeros((k, n))
    available = np.ones(n, dtype=bool)
    selected: List[int] = []

    while len(selected) < k:
        usable = available & (di2 > 0)
        if not usable.any():
            break
        best_gain = di2[usable].max()
        if best_gain < cfg.epsilon:
            break
        ties = np.flatnonzero(usable & (di2 == best_gain))
        j = int(ties[np.argmin(rank[ties])])

        step = len(selected)
        selected.append(j)
        available[j] = False
        if on_step is not None:
            on_step(step, j, float(best_gain))
        if len(selected) == k:
            break

        dj = math.sqrt(best_gain)
        eis = (rows.row(j) - cis[:step, j] @ cis[:step, :]) / dj
        cis[step, :] = eis
        di2 = di2 - eis ** 2
        # numerical floor: a tiny positive residue is still a dependent row
        di2[di2 < GAIN_FLOOR] = 0.0

    if len(selected) < k:
        logger.debug(f"Early stop after {len(selected)} of {k}; filling by anomaly")
        taken = set(selected)
        for i in order:
            if len(selected) == k:
                break
            if i not in taken:
                selected.append(i)
    return selected


def top_anomaly_select(candidates: Sequence[EncodedTrace], k: int) -> List[int]:
    """No-diversity selection: the first k indices of the fill order"""
    if k < 0 or k > len(candidates):
        raise ValueError(f"quota {k} outside [0, {len(candidates)}]")
    return fill_order(candidates)[:k]


def log_det(kernel: np.ndarray, indices: Sequence[int]) -> float:
    """log det of a principal minor (-inf when singular)"""
    if not indices:
        return 0.0
    sign, value = np.linalg.slogdet(kernel[np.ix_(list(indices), list(indices))])
    return float(value) if sign > 0 else float("-inf")


def build_kernel(candidates: Sequence[EncodedTrace],
                 cache: Optional[SimilarityCache] = None,
                 use_quality: bool = True) -> np.ndarray:
    """Dense kernel; used for diagnostics and oracle checks, not on the hot path"""
    q = quality_vector(candidates, use_quality)
    n = len(candidates)
    sims = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            sims[i, j] = sims[j, i] = jaccard(candidates[i].eps, candidates[j].eps, cache)
    return q[:, None] * sims * q[None, :]
