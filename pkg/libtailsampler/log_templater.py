#!/usr/bin/env python3
"""
Log template mining and event id management

TemplateStore maps raw log messages to stable template ids with a Drain-style
fixed-depth prefix tree: messages are routed by token count, then by their
leading tokens, and merged into the most similar cluster at the leaf.

EventManager hands out the integer ids that make up event pairs, one id per
(kind, key): span kinds are keyed by "service/operation", LOG by log_event_key,
which keeps mined template ids apart from ids assigned upstream.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple, Union

logger = logging.getLogger(__name__)

WILDCARD = "<*>"
EMPTY_TEMPLATE_ID = 0
EMPTY_TEMPLATE = "<EMPTY>"

_NUMERIC = re.compile(r"^[-+]?\d+(\.\d+)?$")
_HEX = re.compile(r"^(0[xX])?[0-9a-fA-F]{8,}$")
_UUID = re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$")
_HAS_DIGIT = re.compile(r"\d")


def mask_token(token: str) -> str:
    """Replace obviously variable tokens (numbers, long hex, UUIDs) with the wildcard"""
    if _NUMERIC.match(token) or _UUID.match(token) or _HEX.match(token):
        return WILDCARD
    return token


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self):
        self.children: Dict[str, "_Node"] = {}
        self.clusters: List[int] = []


@dataclass
class TemplateStore:
    """
    Online template miner

    Args:
        depth: total tree depth (root + length layer + depth-2 token layers)
        similarity_threshold: minimum share of equal token positions to merge
        max_children: fan-out bound per internal node; overflow routes to <*>
    """
    depth: int = 4
    similarity_threshold: float = 0.5
    max_children: int = 100
    templates: Dict[int, List[str]] = field(default_factory=dict)
    next_id: int = 1
    external_ids: Set[int] = field(default_factory=set)
    _root: _Node = field(default_factory=_Node, repr=False)
    _by_shape: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.depth < 3:
            raise ValueError("depth must be >= 3")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in (0, 1]")
        self.templates.setdefault(EMPTY_TEMPLATE_ID, [EMPTY_TEMPLATE])

    def template_of(self, message: str) -> int:
        """Return the template id for a raw message, creating or widening a cluster"""
        text = message.strip()
        if not text:
            return EMPTY_TEMPLATE_ID
        tokens = [mask_token(t) for t in text.split()]
        # one id per masked shape, also after its cluster widened
        shape = " ".join(tokens)
        cached = self._by_shape.get(shape)
        if cached is not None:
            return cached

        leaf = self._leaf_for(tokens)

        best_id: Optional[int] = None
        best_sim = -1.0
        for tid in leaf.clusters:
            sim = self._similarity(self.templates[tid], tokens)
            if sim >= self.similarity_threshold and sim > best_sim:
                best_sim = sim
                best_id = tid

        if best_id is None:
            best_id = self.next_id
            self.next_id += 1
            self.templates[best_id] = list(tokens)
            leaf.clusters.append(best_id)
            logger.debug(f"New template {best_id}: {' '.join(tokens)}")
        else:
            template = self.templates[best_id]
            for i, (t, w) in enumerate(zip(template, tokens)):
                if t != w:
                    template[i] = WILDCARD

        self._by_shape[shape] = best_id
        return best_id

    def register_external(self, template_id: int) -> None:
        """Note a template id assigned upstream (pre-templated input)"""
        self.external_ids.add(template_id)

    def template(self, template_id: int) -> str:
        return " ".join(self.templates[template_id])

    def dump_records(self) -> List[Dict[str, Union[int, str]]]:
        mined = [{"template_id": tid, "template": self.template(tid), "source": "mined"}
                 for tid in sorted(self.templates)]
        external = [{"template_id": tid, "template": f"<EXTERNAL:{tid}>", "source": "external"}
                    for tid in sorted(self.external_ids)]
        return mined + external

    def __len__(self) -> int:
        return len(self.templates) + len(self.external_ids)

    def _leaf_for(self, tokens: List[str]) -> _Node:
        length_key = str(len(tokens))
        node = self._root.children.get(length_key)
        if node is None:
            node = self._root.children[length_key] = _Node()

        for token in tokens[: self.depth - 2]:
            key = WILDCARD if _HAS_DIGIT.search(token) else token
            child = node.children.get(key)
            if child is None:
                if len(node.children) >= self.max_children:
                    key = WILDCARD
                    child = node.children.get(key)
                if child is None:
                    child = node.children[key] = _Node()
            node = child
        return node

    @staticmethod
    def _similarity(template: List[str], tokens: List[str]) -> float:
        if not tokens:
            return 1.0
        same = sum(1 for t, w in zip(template, tokens) if t == w)
        return same / len(tokens)


class EventKind(str, Enum):
    SPAN_START = "SPAN_START"
    SPAN_END = "SPAN_END"
    STATUS_ERROR = "STATUS_ERROR"
    PERF_DEG = "PERF_DEG"
    LOG = "LOG"


EventKey = Union[str, int]


def log_event_key(template_id: int, external: bool = False) -> str:
    """LOG event key; upstream ids and mined ids never share a key"""
    return f"{'ext' if external else 'tpl'}:{template_id}"


class EventManager:
    """
    First-encounter id assignment for (kind, key) events

    Ids start at 1 and are never reused within a run.
    """

    def __init__(self):
        self._table: Dict[Tuple[EventKind, EventKey], int] = {}
        self._reverse: List[Tuple[EventKind, EventKey]] = []
        self.next_event_id = 1

    def event_id(self, kind: EventKind, key: EventKey) -> int:
        entry = (kind, key)
        eid = self._table.get(entry)
        if eid is None:
            eid = self.next_event_id
            self._table[entry] = eid
            self._reverse.append(entry)
            self.next_event_id += 1
        return eid

    def describe(self, event_id: int) -> Tuple[EventKind, EventKey]:
        """(kind, key) registered for an id"""
        if not 1 <= event_id <= len(self._reverse):
            raise KeyError(event_id)
        return self._reverse[event_id - 1]

    def label(self, event_id: int) -> str:
        kind, key = self.describe(event_id)
        return f"{kind.value}:{key}"

    def __len__(self) -> int:
        return len(self._table)
