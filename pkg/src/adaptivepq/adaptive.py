"""SmartPQ: one queue, two algorithmic modes, switched at runtime.

Every client operation reads the shared mode cell. In NUMA-oblivious mode
(``1``) the caller operates on the base skip list directly; in NUMA-aware
mode (``2``) it delegates through the Nuddle request/response lines. Both
paths mutate the same concurrent structure, so a mode flip needs no barrier.

Requests in flight at a 2 -> 1 flip: a delegating client first bumps an
in-flight counter and only then re-reads the mode. Servers that see mode 1
keep serving while that counter is non-zero, so a request published just
before the flip is always answered.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

from adaptivepq._atomic import AtomicCounter
from adaptivepq.classify import NEUTRAL, DecisionTree, FeatureVector
from adaptivepq.delegate import ClientHandle, NuddlePQ, ServerHandle
from adaptivepq.pqcore import Entry, SkipListPQ, SprayParams

__all__ = [
    "OBLIVIOUS",
    "AWARE",
    "WorkloadStats",
    "SmartPQ",
    "SmartClient",
    "SmartServer",
    "Transition",
    "DecisionLoop",
    "smart_decide",
    "decision_loop",
]

log = logging.getLogger(__name__)

OBLIVIOUS = 1
AWARE = 2
_MODES = (OBLIVIOUS, AWARE)

# Handles publish their local counters to the shared stats every this many ops.
STATS_FLUSH_EVERY = 16


class WorkloadStats:
    """Shared workload counters sampled by the decision loop."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.inserts = 0
        self.deletes = 0
        self.inserts_ok = 0
        self.deletes_ok = 0
        self.size_offset = 0
        self.active = AtomicCounter(0)
        self._min_key = math.inf
        self._max_key = -math.inf
        self._last_inserts = 0
        self._last_deletes = 0
        self._last_range = 0
        self._last_pct = 0.5

    def flush(self, ins: int, dels: int, ins_ok: int, dels_ok: int, kmin: float, kmax: float) -> None:
        with self._lock:
            self.inserts += ins
            self.deletes += dels
            self.inserts_ok += ins_ok
            self.deletes_ok += dels_ok
            if kmin < self._min_key:
                self._min_key = kmin
            if kmax > self._max_key:
                self._max_key = kmax

    def add_size(self, n: int) -> None:
        with self._lock:
            self.size_offset += n

    @property
    def size_estimate(self) -> int:
        return self.size_offset + self.inserts_ok - self.deletes_ok

    def window(self) -> FeatureVector:
        """Features for the ops seen since the previous call."""
        with self._lock:
            d_ins = self.inserts - self._last_inserts
            d_del = self.deletes - self._last_deletes
            self._last_inserts = self.inserts
            self._last_deletes = self.deletes
            if d_ins + d_del:
                self._last_pct = d_ins / (d_ins + d_del)
            if self._max_key >= self._min_key:
                self._last_range = int(self._max_key - self._min_key)
            self._min_key = math.inf
            self._max_key = -math.inf
            size = max(0, self.size_offset + self.inserts_ok - self.deletes_ok)
        return FeatureVector(max(0, self.active.get()), size, self._last_range, self._last_pct)


class _LocalStats:
    __slots__ = ("ins", "dels", "ins_ok", "dels_ok", "kmin", "kmax", "n")

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.ins = self.dels = self.ins_ok = self.dels_ok = self.n = 0
        self.kmin = math.inf
        self.kmax = -math.inf


@dataclass(frozen=True)
class Transition:
    time: float
    old: int
    new: int


class SmartPQ(NuddlePQ):
    """Nuddle structure plus a shared mode cell, stats and a decision tree."""

    def __init__(
        self,
        base: SkipListPQ,
        servers: int,
        max_clients: int,
        line_size: int = 64,
        *,
        mode: int = OBLIVIOUS,
        tree: Optional[DecisionTree] = None,
        spray: Optional[SprayParams] = None,
        check_ownership: bool = False,
    ) -> None:
        super().__init__(base, servers, max_clients, line_size, spray=spray, check_ownership=check_ownership)
        if mode not in _MODES:
            raise ValueError(f"mode must be 1 or 2, got {mode}")
        self.algo = mode
        self.tree = tree
        self.stats = WorkloadStats()
        self.inflight = AtomicCounter(0)
        self.transitions: list[Transition] = []
        self.mode_history: list[int] = [mode]
        self._mode_lock = threading.Lock()
        self._t0 = time.monotonic()

    def _make_client(self, group: int, pos: int) -> "SmartClient":
        return SmartClient(self, group, pos)

    def _make_server(self, index: int, groups: list[int], pinned: bool, core: Optional[int]) -> "SmartServer":
        return SmartServer(self, index, groups, pinned, core)

    def set_mode(self, mode: int) -> bool:
        """Publish ``mode``; ``True`` if it changed."""
        if mode not in _MODES:
            raise ValueError(f"mode must be 1 or 2, got {mode}")
        with self._mode_lock:
            old = self.algo
            if old == mode:
                return False
            self.algo = mode
            self.mode_history.append(mode)
            self.transitions.append(Transition(time.monotonic() - self._t0, old, mode))
        return True

    def install_tree(self, tree: DecisionTree) -> None:
        self.tree = tree

    def prefill(self, items) -> int:
        """Insert ``(key, value)`` pairs directly and account for them in the size estimate."""
        n = 0
        for key, value in items:
            if self.base_pq.insert(key, value):
                n += 1
        self.stats.add_size(n)
        return n

    def features(self) -> FeatureVector:
        return self.stats.window()

    def decide(self, f: Optional[FeatureVector] = None) -> int:
        return smart_decide(self, self.features() if f is None else f)


class _Recorder:
    """Per-handle stats buffer; flushed to the shared stats every few ops."""

    def _init_stats(self, pq: SmartPQ) -> None:
        self._stats = pq.stats
        self._local = _LocalStats()
        self.active = False
        self.activate()

    def activate(self) -> None:
        if not self.active:
            self._stats.active.add(1)
            self.active = True

    def deactivate(self) -> None:
        if self.active:
            self.flush_stats()
            self._stats.active.add(-1)
            self.active = False

    def _note(self, key: Optional[int], is_insert: bool, ok: bool) -> None:
        loc = self._local
        if is_insert:
            loc.ins += 1
            loc.ins_ok += ok
            if key < loc.kmin:
                loc.kmin = key
            if key > loc.kmax:
                loc.kmax = key
        else:
            loc.dels += 1
            loc.dels_ok += ok
        loc.n += 1
        if loc.n >= STATS_FLUSH_EVERY:
            self.flush_stats()

    def flush_stats(self) -> None:
        loc = self._local
        if loc.n:
            self._stats.flush(loc.ins, loc.dels, loc.ins_ok, loc.dels_ok, loc.kmin, loc.kmax)
            loc.reset()


class SmartClient(ClientHandle, _Recorder):
    def __init__(self, pq: SmartPQ, group: int, pos: int) -> None:
        super().__init__(pq, group, pos)
        self._init_stats(pq)
        self.base_pq = pq.base_pq
        self.direct_ops = 0
        self.delegated_ops = 0

    def insert(self, key: int, value: int = 0) -> bool:
        pq = self.pq
        if pq.algo == OBLIVIOUS:
            ok = self.base_pq.insert(key, value)
            self.direct_ops += 1
        else:
            pq.inflight.add(1)
            try:
                if pq.algo == AWARE:
                    ok = self.insert_delegated(key, value)
                    self.delegated_ops += 1
                else:
                    ok = self.base_pq.insert(key, value)
                    self.direct_ops += 1
            finally:
                pq.inflight.add(-1)
        self._note(key, True, ok)
        return ok

    def delete_min(self) -> Optional[Entry]:
        pq = self.pq
        if pq.algo == OBLIVIOUS:
            entry = self.base_pq.delete_min(pq.spray)
            self.direct_ops += 1
        else:
            pq.inflight.add(1)
            try:
                if pq.algo == AWARE:
                    entry = self.delete_min_delegated()
                    self.delegated_ops += 1
                else:
                    entry = self.base_pq.delete_min(pq.spray)
                    self.direct_ops += 1
            finally:
                pq.inflight.add(-1)
        self._note(None, False, entry is not None)
        return entry


class SmartServer(ServerHandle, _Recorder):
    def __init__(self, pq: SmartPQ, index: int, groups: list[int], pinned: bool, core: Optional[int]) -> None:
        super().__init__(pq, index, groups, pinned, core)
        self._init_stats(pq)
        self.drain_passes = 0

    def insert(self, key: int, value: int = 0) -> bool:
        ok = self.base_pq.insert(key, value)
        self._note(key, True, ok)
        return ok

    def delete_min(self) -> Optional[Entry]:
        entry = self.base_pq.delete_min(self.pq.spray)
        self._note(None, False, entry is not None)
        return entry

    def serve(self) -> int:
        """Serve pending requests in NUMA-aware mode; otherwise return at once.

        In NUMA-oblivious mode the only work done is draining requests that
        clients published before they saw the flip.
        """
        pq = self.pq
        if pq.algo == AWARE:
            return self.serve_requests()
        if pq.inflight.get() > 0:
            self.drain_passes += 1
            return self.serve_requests()
        return 0


def smart_decide(h: Union[SmartPQ, SmartClient, SmartServer], f: FeatureVector) -> int:
    """Classify ``f`` and switch mode on a non-neutral prediction.

    Returns the raw prediction, neutral included.
    """
    pq = h if isinstance(h, SmartPQ) else h.pq
    if pq.tree is None:
        raise RuntimeError("no decision tree installed")
    algo = pq.tree.predict(f)
    if algo != NEUTRAL:
        pq.set_mode(algo)
    return algo


class DecisionLoop:
    """Background thread that re-evaluates the mode every ``interval`` seconds."""

    def __init__(
        self,
        pq: SmartPQ,
        interval: float = 1.0,
        on_tick: Optional[Callable[[float, FeatureVector, int], None]] = None,
    ) -> None:
        if interval <= 0:
            raise ValueError(f"interval must be positive, got {interval}")
        self.pq = pq
        self.interval = interval
        self.on_tick = on_tick
        self.ticks: list[tuple[float, FeatureVector, int]] = []
        self._next = time.monotonic() + interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="smartpq-decide", daemon=True)

    def start(self) -> "DecisionLoop":
        self._thread.start()
        return self

    def _run(self) -> None:
        timeout = None if math.isinf(self.interval) else self.interval
        while not self._stop.wait(timeout):
            self.tick()

    def tick(self) -> int:
        f = self.pq.features()
        pred = smart_decide(self.pq, f)
        t = time.monotonic() - self.pq._t0
        self.ticks.append((t, f, pred))
        if self.on_tick is not None:
            self.on_tick(t, f, pred)
        log.debug("decision tick %.3f: %s -> %d (mode %d)", t, f, pred, self.pq.algo)
        return pred

    def poll(self) -> Optional[int]:
        """Tick if an interval has elapsed; for piggybacking on a server loop."""
        now = time.monotonic()
        if now < self._next:
            return None
        self._next = now + self.interval
        return self.tick()

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join()

    def __enter__(self) -> "DecisionLoop":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def decision_loop(pq: SmartPQ, interval: float = 1.0, **kwargs) -> DecisionLoop:
    if pq.tree is None:
        raise RuntimeError("no decision tree installed")
    return DecisionLoop(pq, interval, **kwargs).start()
