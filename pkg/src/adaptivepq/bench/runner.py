"""Phase-driven throughput benchmark.

Every worker repeats: a delay loop of ``pause_iters`` iterations, one
operation drawn from its own seeded stream, then a bump of its op counter.
Server threads of the delegating implementations alternate a serve pass with
one random operation of their own. A sampler in the calling thread turns
the op counters into per-interval throughput.

Throughput counts completed calls, so failed (duplicate-key) inserts and
empty deleteMins count as operations.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from random import Random
from typing import Iterator, Optional

from adaptivepq import topology
from adaptivepq.adaptive import AWARE, OBLIVIOUS, DecisionLoop, SmartPQ, Transition
from adaptivepq.bench.phases import WorkloadPhase
from adaptivepq.classify import DecisionTree
from adaptivepq.delegate import NuddlePQ
from adaptivepq.pqcore import AuditError, SkipListPQ, SprayParams

__all__ = [
    "IMPLS",
    "RunConfig",
    "RunResult",
    "Sample",
    "ConfigError",
    "ConservationError",
    "run_workload",
    "op_stream",
    "prefill_keys",
]

log = logging.getLogger(__name__)

IMPLS = ("oblivious", "nuddle", "smartpq", "ffwd")
INSERT, DELETE_MIN = "insert", "deleteMin"


class ConfigError(ValueError):
    pass


class ConservationError(AssertionError):
    pass


@dataclass
class RunConfig:
    servers: int = 2
    line_size: int = 64
    pause_iters: int = 25
    seed: int = 0
    sample_interval: float = 1.0
    decision_interval: float = 1.0
    tree: Optional[DecisionTree] = None
    initial_mode: int = OBLIVIOUS
    relaxed: bool = True
    max_level: int = 20
    topo: Optional[topology.Topology] = None
    pin: bool = False
    audit: bool = True


@dataclass(frozen=True)
class Sample:
    time_s: float
    thr_ops: float
    mode: int


@dataclass
class RunResult:
    impl: str
    samples: list[Sample] = field(default_factory=list)
    phase_means: list[float] = field(default_factory=list)
    phase_bounds: list[tuple[float, float]] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    final_size: int = 0
    total_ops: int = 0
    inserted_ok: int = 0
    deleted_ok: int = 0

    def to_csv(self) -> str:
        lines = ["time_s,thr_ops,mode"]
        lines += [f"{s.time_s:.3f},{s.thr_ops:.1f},{s.mode}" for s in self.samples]
        return "\n".join(lines) + "\n"


def op_stream(seed: int, phase_idx: int, role: str, idx: int, phase: WorkloadPhase) -> Iterator[tuple[str, int]]:
    """Deterministic operation sequence of one worker in one phase."""
    rng = Random(f"{seed}:{phase_idx}:{role}:{idx}")
    pct = phase.insert_pct
    hi = phase.key_range
    while True:
        if rng.random() < pct:
            yield INSERT, rng.randint(1, hi)
        else:
            yield DELETE_MIN, 0


def prefill_keys(seed: int, n: int, key_range: int) -> list[int]:
    if n > key_range:
        raise ConfigError(f"cannot place {n} distinct keys in a range of {key_range}")
    return Random(f"{seed}:prefill").sample(range(1, key_range + 1), n)


class _Tally:
    """Per-worker bookkeeping; only its own thread writes to it."""

    __slots__ = ("ops", "inserted", "deleted")

    def __init__(self) -> None:
        self.ops = 0
        self.inserted: list[int] = []
        self.deleted: list[int] = []


def _delay(n: int) -> None:
    for _ in range(n):
        pass


def _drive(handle, stream, tally: _Tally, stop: threading.Event, pause: int, ctx, topo) -> None:
    if ctx is not None:
        topology.pin_self(ctx, topo)
    insert = handle.insert
    delete_min = handle.delete_min
    ins_log = tally.inserted
    del_log = tally.deleted
    while not stop.is_set():
        _delay(pause)
        op, key = next(stream)
        if op == INSERT:
            if insert(key, key):
                ins_log.append(key)
        else:
            entry = delete_min()
            if entry is not None:
                del_log.append(entry.key)
        tally.ops += 1


def _serve(server, stream, tally: _Tally, stop: threading.Event, pause: int, smart: bool, ctx, topo, decider) -> None:
    if ctx is not None:
        topology.pin_self(ctx, topo)
    serve = server.serve if smart else server.serve_requests
    ins_log = tally.inserted
    del_log = tally.deleted
    while not stop.is_set():
        serve()
        if decider is not None:
            decider.poll()
        _delay(pause)
        op, key = next(stream)
        if op == INSERT:
            if server.insert(key, key):
                ins_log.append(key)
        else:
            entry = server.delete_min()
            if entry is not None:
                del_log.append(entry.key)
        tally.ops += 1


class _DirectHandle:
    """Worker view of the base queue for the NUMA-oblivious implementation."""

    def __init__(self, pq: SkipListPQ, spray: Optional[SprayParams]) -> None:
        self.pq = pq
        self.spray = spray
        self.insert = pq.insert

    def delete_min(self):
        return self.pq.delete_min(self.spray)


def _validate(impl: str, phases: list[WorkloadPhase], cfg: RunConfig) -> int:
    if impl not in IMPLS:
        raise ConfigError(f"unknown implementation {impl!r}; choose from {', '.join(IMPLS)}")
    if not phases:
        raise ConfigError("no phases given")
    servers = cfg.servers
    if impl == "ffwd":
        if servers != 1:
            raise ConfigError(f"ffwd runs exactly one server, got --servers {servers}")
    if servers < 1:
        raise ConfigError("need at least one server")
    if phases[0].initial_size > phases[0].key_range:
        raise ConfigError("initial size exceeds the key range of the first phase")
    return servers


def run_workload(
    impl: str,
    phases: list[WorkloadPhase],
    cfg: Optional[RunConfig] = None,
    piggyback_decisions: bool = False,
) -> RunResult:
    """Run ``phases`` back to back on one persistent queue.

    Raises :class:`ConservationError` if the final audit finds lost or
    duplicated keys.
    """
    cfg = cfg or RunConfig()
    servers = _validate(impl, phases, cfg)
    delegating = impl != "oblivious"
    smart = impl == "smartpq"
    topo = cfg.topo or topology.discover()

    base = SkipListPQ(cfg.max_level, cfg.seed)
    max_clients = max(1, max(p.n_threads - servers for p in phases)) if delegating else 0
    nuddle: Optional[NuddlePQ] = None
    if smart:
        nuddle = SmartPQ(base, servers, max_clients, cfg.line_size, mode=cfg.initial_mode, tree=cfg.tree)
    elif delegating:
        nuddle = NuddlePQ(base, servers, max_clients, cfg.line_size)
    if nuddle is not None and cfg.relaxed:
        nuddle.spray = SprayParams(p=servers)

    prefill = prefill_keys(cfg.seed, phases[0].initial_size, phases[0].key_range)
    if smart:
        nuddle.prefill((k, k) for k in prefill)
    else:
        for k in prefill:
            base.insert(k, k)

    server_handles = [nuddle.init_server() for _ in range(servers)] if delegating else []
    client_handles = [nuddle.init_client() for _ in range(max_clients)] if delegating else []
    if smart:
        for h in server_handles + client_handles:
            h.deactivate()

    result = RunResult(impl)
    tallies: list[_Tally] = []
    decider: Optional[DecisionLoop] = None
    if smart and cfg.tree is not None:
        decider = DecisionLoop(nuddle, cfg.decision_interval)
        if not piggyback_decisions:
            decider.start()
    elif smart:
        log.warning("smartpq run without a decision tree; mode stays %d", cfg.initial_mode)

    def current_mode() -> int:
        if smart:
            return nuddle.algo
        return AWARE if delegating else OBLIVIOUS

    t0 = time.monotonic()
    last_t, last_ops = t0, 0
    next_sample = t0 + cfg.sample_interval
    try:
        for pi, phase in enumerate(phases):
            phase_start = time.monotonic()
            ops_before = sum(t.ops for t in tallies)
            stop_clients = threading.Event()
            stop_servers = threading.Event()
            workers: list[threading.Thread] = []
            servers_t: list[threading.Thread] = []
            if delegating:
                n_clients = max(0, phase.n_threads - servers)
                ctxs = _contexts(cfg, topo, servers, n_clients, nuddle.clnt_per_group)
                for i, srv in enumerate(server_handles):
                    tally = _Tally()
                    tallies.append(tally)
                    if smart:
                        srv.activate()
                    servers_t.append(
                        threading.Thread(
                            target=_serve,
                            args=(srv, op_stream(cfg.seed, pi, "server", i, phase), tally, stop_servers,
                                  cfg.pause_iters, smart, ctxs[i], topo,
                                  decider if piggyback_decisions and i == 0 else None),
                            daemon=True,
                        )
                    )
                active = client_handles[:n_clients]
                for i, cl in enumerate(active):
                    tally = _Tally()
                    tallies.append(tally)
                    if smart:
                        cl.activate()
                    workers.append(
                        threading.Thread(
                            target=_drive,
                            args=(cl, op_stream(cfg.seed, pi, "client", i, phase), tally, stop_clients,
                                  cfg.pause_iters, ctxs[servers + i], topo),
                            daemon=True,
                        )
                    )
                if nuddle.spray is not None and smart:
                    nuddle.spray = SprayParams(p=phase.n_threads)
            else:
                active = []
                spray = SprayParams(p=phase.n_threads) if cfg.relaxed else None
                ctxs = _contexts(cfg, topo, 0, phase.n_threads, 1)
                for i in range(phase.n_threads):
                    tally = _Tally()
                    tallies.append(tally)
                    workers.append(
                        threading.Thread(
                            target=_drive,
                            args=(_DirectHandle(base, spray), op_stream(cfg.seed, pi, "worker", i, phase), tally,
                                  stop_clients, cfg.pause_iters, ctxs[i], topo),
                            daemon=True,
                        )
                    )
            for t in servers_t + workers:
                t.start()

            phase_end = phase_start + phase.duration
            while True:
                now = time.monotonic()
                if now >= phase_end:
                    break
                time.sleep(max(0.0, min(next_sample, phase_end) - now))
                now = time.monotonic()
                if now >= next_sample:
                    ops = sum(t.ops for t in tallies)
                    result.samples.append(Sample(now - t0, (ops - last_ops) / (now - last_t), current_mode()))
                    last_t, last_ops = now, ops
                    next_sample += cfg.sample_interval

            # Clients first: their pending requests still need live servers.
            stop_clients.set()
            for t in workers:
                t.join()
            stop_servers.set()
            for t in servers_t:
                t.join()
            if smart:
                for h in server_handles + active:
                    h.deactivate()
            phase_stop = time.monotonic()
            phase_ops = sum(t.ops for t in tallies) - ops_before
            result.phase_means.append(phase_ops / (phase_stop - phase_start))
            result.phase_bounds.append((phase_start - t0, phase_stop - t0))
    finally:
        if decider is not None:
            decider.stop()

    now = time.monotonic()
    ops = sum(t.ops for t in tallies)
    if now - last_t > 0.5 * cfg.sample_interval:
        result.samples.append(Sample(now - t0, (ops - last_ops) / (now - last_t), current_mode()))
    result.total_ops = ops
    if smart:
        result.transitions = list(nuddle.transitions)
    result.final_size = base.size()
    inserted = Counter(prefill)
    deleted: Counter = Counter()
    for t in tallies:
        inserted.update(t.inserted)
        deleted.update(t.deleted)
    result.inserted_ok = sum(inserted.values()) - len(prefill)
    result.deleted_ok = sum(deleted.values())
    if cfg.audit:
        _conservation_audit(base, inserted, deleted)
    return result


def _contexts(cfg: RunConfig, topo, n_servers: int, n_clients: int, group: int) -> list[Optional[int]]:
    if not cfg.pin:
        return [None] * (n_servers + n_clients)
    try:
        return [ctx for _, ctx in topology.placement(topo, n_servers, n_clients, group)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _conservation_audit(base: SkipListPQ, inserted: Counter, deleted: Counter) -> None:
    try:
        base.audit()
    except AuditError as exc:
        raise ConservationError(f"structural audit failed: {exc}") from None
    remaining = Counter(base.keys())
    if inserted != deleted + remaining:
        lost = inserted - (deleted + remaining)
        extra = (deleted + remaining) - inserted
        raise ConservationError(
            f"conservation violated: {sum(lost.values())} keys lost, {sum(extra.values())} keys duplicated"
        )
    if base.size() != sum(remaining.values()):
        raise ConservationError(f"size counter {base.size()} != {sum(remaining.values())} remaining keys")
