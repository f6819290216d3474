"""Concurrent skip-list priority queue.

The queue is a lock-free skip list in the style of Herlihy, Lev, Luchangco
and Shavit: every forward link is an immutable ``(successor, marked)`` pair
replaced by compare-and-swap, and a node is deleted once its level-0 link is
marked. Two deleteMin flavours share the structure:

* :meth:`SkipListPQ.delete_min_exact` scans level 0 from the head and claims
  the first unmarked node (logical deletion first, physical unlinking after).
* :meth:`SkipListPQ.delete_min_spray` performs a SprayList-style random walk
  that starts a few levels up and lands on one of the first few elements,
  which spreads concurrent deleters over different nodes.

Keys follow set semantics: inserting a key that is already present returns
``False`` and leaves the stored value untouched.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from random import Random
from typing import Iterator, NamedTuple, Optional

import numpy as np

from adaptivepq._atomic import AtomicCounter, cas_item

__all__ = [
    "KEY_MIN",
    "KEY_MAX",
    "Entry",
    "SprayParams",
    "SkipListPQ",
    "AuditError",
    "pq_new",
    "spray_rank_bound",
]

# Sentinel keys. Valid entry keys lie strictly between them.
KEY_MIN = 0
KEY_MAX = (1 << 64) - 1
MAX_LEVEL_LIMIT = 32


class Entry(NamedTuple):
    key: int
    value: int


class AuditError(AssertionError):
    """Structural invariant violated in a quiescent audit."""


@dataclass(frozen=True)
class SprayParams:
    """Shape of a spray walk.

    The walk starts at level ``height_coeff * ceil(log2 p)`` and, on each level
    down to 0, moves forward ``1 + U(0, walk_coeff * ceil(log2 p))`` nodes.
    With ``p == 1`` it lands on the first element.
    """

    p: int = 1
    height_coeff: int = 1
    walk_coeff: int = 1

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError(f"thread-count hint must be >= 1, got {self.p}")
        if self.height_coeff < 0 or self.walk_coeff < 0:
            raise ValueError("spray coefficients must be non-negative")

    @property
    def log_p(self) -> int:
        return math.ceil(math.log2(self.p)) if self.p > 1 else 0

    @property
    def start_height(self) -> int:
        return self.height_coeff * self.log_p

    @property
    def max_walk(self) -> int:
        """Largest number of steps taken on a single level."""
        return 1 + self.walk_coeff * self.log_p


def spray_rank_bound(params: SprayParams, eps: float = 1e-9, max_level: int = MAX_LEVEL_LIMIT) -> int:
    """Rank (1-based) that a quiescent spray exceeds with probability < ``eps``.

    A step on level ``h`` starting from a node of height > h skips a number of
    level-0 nodes that is geometric with success probability ``2**-h`` (node
    heights are geometric with ratio 1/2). The landing rank of the longest
    possible walk is therefore a sum of independent geometric variables:
    ``max_walk`` of them per level from ``start_height`` down to 0. Shorter
    walks and walks truncated by the tail land at smaller ranks, so the
    ``1 - eps`` quantile of that sum bounds every spray. The distribution is
    computed by direct convolution.
    """
    top = min(params.start_height, max_level - 1)
    steps = params.max_walk
    dist = np.array([1.0])  # dist[r] = P(rank == r); rank 0 is the head
    for level in range(top, -1, -1):
        geo = _geometric_pmf(2.0**-level, eps)
        for _ in range(steps):
            dist = np.convolve(dist, geo)
    cdf = np.cumsum(dist)
    return min(int(np.searchsorted(cdf, 1.0 - eps)), len(dist) - 1)


def _geometric_pmf(q: float, eps: float) -> np.ndarray:
    """P(G == g) for a geometric G on {1, 2, ...}, cut where the tail is negligible."""
    if q >= 1.0:
        return np.array([0.0, 1.0])
    g_max = max(1, math.ceil(math.log(eps * 1e-6) / math.log1p(-q)) + 1)
    g = np.arange(g_max + 1)
    pmf = q * (1.0 - q) ** (g - 1.0)
    pmf[0] = 0.0
    return pmf


class _Node:
    __slots__ = ("key", "value", "next", "top")

    def __init__(self, key: int, value: int, top: int) -> None:
        self.key = key
        self.value = value
        self.top = top
        # next[level] is an immutable (successor, marked) pair.
        self.next: list = [None] * (top + 1)

    def __repr__(self) -> str:
        return f"_Node(key={self.key}, top={self.top})"


class SkipListPQ:
    """Lock-free skip-list priority queue with set semantics on keys."""

    def __init__(self, max_level: int = 20, seed: int = 0) -> None:
        if not 1 <= max_level <= MAX_LEVEL_LIMIT:
            raise ValueError(f"max_level must be in [1, {MAX_LEVEL_LIMIT}], got {max_level}")
        self.max_level = max_level
        self.seed = seed
        self._tail = _Node(KEY_MAX, 0, max_level - 1)
        self._tail.next = [(None, False)] * max_level
        self._head = _Node(KEY_MIN, 0, max_level - 1)
        self._head.next = [(self._tail, False)] * max_level
        self._size = AtomicCounter(0)
        self._local = threading.local()
        self._thread_ordinals = itertools.count()

    # -- per-thread randomness -------------------------------------------

    def _rng(self) -> Random:
        rng = getattr(self._local, "rng", None)
        if rng is None:
            ordinal = next(self._thread_ordinals)
            # Distinct, reproducible stream per thread in registration order.
            rng = Random((self.seed << 16) ^ (ordinal * 0x9E3779B97F4A7C15))
            self._local.rng = rng
        return rng

    def _random_top(self) -> int:
        if self.max_level == 1:
            return 0
        bits = self._rng().getrandbits(self.max_level - 1)
        top = 0
        while bits & 1:
            top += 1
            bits >>= 1
        return top

    # -- core search -----------------------------------------------------

    def _find(self, key: int, preds: list, succs: list) -> bool:
        """Fill ``preds``/``succs`` around ``key`` and unlink marked nodes on the way."""
        head = self._head
        while True:
            pred = head
            retry = False
            for level in range(self.max_level - 1, -1, -1):
                curr = pred.next[level][0]
                while True:
                    link = curr.next[level]
                    succ, marked = link
                    while marked:
                        expected = pred.next[level]
                        if expected[0] is not curr or expected[1]:
                            retry = True
                            break
                        if not cas_item(pred.next, level, expected, (succ, False)):
                            retry = True
                            break
                        curr = succ
                        succ, marked = curr.next[level]
                    if retry:
                        break
                    if curr.key < key:
                        pred = curr
                        curr = succ
                    else:
                        break
                if retry:
                    break
                preds[level] = pred
                succs[level] = curr
            if not retry:
                return succs[0].key == key

    # -- public API ------------------------------------------------------

    def insert(self, key: int, value: int = 0) -> bool:
        """Add ``key``; return ``False`` if it is already present."""
        if not KEY_MIN < key < KEY_MAX:
            raise ValueError(f"key {key} outside the open range ({KEY_MIN}, {KEY_MAX})")
        top = self._random_top()
        preds = [None] * self.max_level
        succs = [None] * self.max_level
        while True:
            if self._find(key, preds, succs):
                return False
            node = _Node(key, value, top)
            for level in range(top + 1):
                node.next[level] = (succs[level], False)
            pred = preds[0]
            expected = pred.next[0]
            if expected[0] is not succs[0] or expected[1]:
                continue
            if not cas_item(pred.next, 0, expected, (node, False)):
                continue
            self._size.add(1)
            for level in range(1, top + 1):
                while True:
                    pred = preds[level]
                    succ = succs[level]
                    own = node.next[level]
                    if own[1]:
                        # Concurrently deleted; stop building the tower.
                        return True
                    if own[0] is not succ:
                        if not cas_item(node.next, level, own, (succ, False)):
                            continue
                    expected = pred.next[level]
                    if expected[0] is succ and not expected[1]:
                        if cas_item(pred.next, level, expected, (node, False)):
                            if node.next[level][1]:
                                # Deleted before this link landed; the deleter's
                                # cleanup may already have passed this level.
                                self._unlink(key)
                                return True
                            break
                    self._find(key, preds, succs)
                    if succs[0] is not node:
                        return True
            return True

    def _claim(self, node: _Node) -> bool:
        """Logically delete ``node``; ``True`` iff this caller won it."""
        for level in range(node.top, 0, -1):
            link = node.next[level]
            while not link[1]:
                cas_item(node.next, level, link, (link[0], True))
                link = node.next[level]
        while True:
            link = node.next[0]
            if link[1]:
                return False
            if cas_item(node.next, 0, link, (link[0], True)):
                self._size.add(-1)
                self._unlink(node.key)
                return True

    def _unlink(self, key: int) -> None:
        """Physically remove marked nodes with ``key`` from every level.

        Searching for ``key + 1`` walks past every node with ``key``, and
        :meth:`_find` unlinks each marked node it meets.
        """
        self._find(key + 1, [None] * self.max_level, [None] * self.max_level)

    def delete_min_exact(self) -> Optional[Entry]:
        """Remove and return the minimum entry, or ``None`` when empty."""
        tail = self._tail
        curr = self._head.next[0][0]
        while curr is not tail:
            succ, marked = curr.next[0]
            if not marked and self._claim(curr):
                return Entry(curr.key, curr.value)
            curr = succ
        return None

    def _spray_land(self, params: SprayParams, rng: Random) -> _Node:
        tail = self._tail
        node = self._head
        top = min(params.start_height, self.max_level - 1)
        extra = params.walk_coeff * params.log_p
        for level in range(top, -1, -1):
            steps = 1 + (rng.randint(0, extra) if extra else 0)
            for _ in range(steps):
                nxt = node.next[level][0]
                if nxt is tail:
                    break
                node = nxt
        return node

    def delete_min_spray(self, params: SprayParams) -> Optional[Entry]:
        """Remove and return an entry among the first few.

        Up to three sprays are attempted; after that the exact scan decides,
        so an empty result is never a relaxation artifact.
        """
        if params.p == 1:
            return self.delete_min_exact()
        rng = self._rng()
        head = self._head
        for _ in range(3):
            node = self._spray_land(params, rng)
            if node is head:
                continue
            if not node.next[0][1] and self._claim(node):
                return Entry(node.key, node.value)
        return self.delete_min_exact()

    def delete_min(self, spray: Optional[SprayParams] = None) -> Optional[Entry]:
        if spray is None:
            return self.delete_min_exact()
        return self.delete_min_spray(spray)

    def contains(self, key: int) -> bool:
        node = self._head
        for level in range(self.max_level - 1, -1, -1):
            nxt = node.next[level][0]
            while nxt.key < key:
                node = nxt
                nxt = node.next[level][0]
        return nxt.key == key and not nxt.next[0][1]

    def size(self) -> int:
        return self._size.get()

    __len__ = size

    def items(self) -> Iterator[Entry]:
        """Live entries in key order. Only a snapshot when quiescent."""
        tail = self._tail
        curr = self._head.next[0][0]
        while curr is not tail:
            succ, marked = curr.next[0]
            if not marked:
                yield Entry(curr.key, curr.value)
            curr = succ

    def keys(self) -> list[int]:
        return [e.key for e in self.items()]

    def audit(self) -> None:
        """Check the structural invariants; call only when quiescent.

        Raises :class:`AuditError` on the first violation found.
        """
        tail = self._tail
        bottom: list[_Node] = []
        curr = self._head.next[0][0]
        prev_key = KEY_MIN
        while curr is not tail:
            if curr.next[0][1]:
                raise AuditError(f"marked node {curr.key} still linked at level 0")
            if not KEY_MIN < curr.key < KEY_MAX:
                raise AuditError(f"key {curr.key} collides with a sentinel")
            if curr.key <= prev_key:
                raise AuditError(f"level 0 not strictly ascending at key {curr.key}")
            prev_key = curr.key
            bottom.append(curr)
            curr = curr.next[0][0]
        below = set(map(id, bottom))
        for level in range(1, self.max_level):
            curr = self._head.next[level][0]
            prev_key = KEY_MIN
            members = set()
            while curr is not tail:
                if id(curr) not in below:
                    raise AuditError(f"level {level} node {curr.key} missing from level {level - 1}")
                if curr.key <= prev_key:
                    raise AuditError(f"level {level} not ascending at key {curr.key}")
                prev_key = curr.key
                members.add(id(curr))
                curr = curr.next[level][0]
            below = members
        if len(bottom) != self.size():
            raise AuditError(f"size counter {self.size()} != {len(bottom)} linked entries")

    def __repr__(self) -> str:
        return f"SkipListPQ(size={self.size()}, max_level={self.max_level})"


def pq_new(max_level: int = 20, seed: int = 0) -> SkipListPQ:
    return SkipListPQ(max_level, seed)
