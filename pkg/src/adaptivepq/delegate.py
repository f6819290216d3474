"""Nuddle: NUMA node delegation over a shared concurrent priority queue.

A handful of server threads, pinned to one NUMA node, execute operations on
the base :class:`~adaptivepq.pqcore.SkipListPQ` on behalf of client threads.
Clients and servers talk through line-sized cells in two flat arrays of
64-bit words:

* one request slot per client (``line_size`` bytes each), written by the
  client and read by the server that owns its group;
* one response line per client group, written by the group's server and read
  by every client in the group.

Freshness uses a toggle handshake: a client flips the toggle bit in its
request control word when it publishes, and the server echoes that bit into
the group's toggle word after writing the result. A request is pending while
the two bits differ. Word layouts are documented in ``docs/protocol.md``.
"""

from __future__ import annotations

import logging
import threading
from typing import Optional

from adaptivepq import topology
from adaptivepq._atomic import relax
from adaptivepq.pqcore import KEY_MAX, Entry, SkipListPQ, SprayParams

__all__ = [
    "OP_NONE",
    "OP_INSERT",
    "OP_DELETE_MIN",
    "EMPTY",
    "LINE_SIZES",
    "group_capacity",
    "RegistrationError",
    "NuddlePQ",
    "ClientHandle",
    "ServerHandle",
    "nuddle_init",
    "init_client",
    "init_server",
]

log = logging.getLogger(__name__)

OP_NONE = 0
OP_INSERT = 1
OP_DELETE_MIN = 2

# deleteMin result meaning "queue was empty"; equal to the tail sentinel key.
EMPTY = KEY_MAX

WORD = 8
LINE_SIZES = (64, 128)

# Request slot word offsets.
REQ_CTRL = 0  # bits 0-7: op, bit 63: toggle
REQ_KEY = 1
REQ_VALUE = 2
REQ_RET_VALUE = 3  # deleteMin payload, written by the server

TOGGLE_SHIFT = 63
OP_MASK = 0xFF


def group_capacity(line_size: int) -> int:
    """Clients sharing one response line: one 8-byte result each plus a toggle word."""
    if line_size not in LINE_SIZES:
        raise ValueError(f"line_size must be one of {LINE_SIZES}, got {line_size}")
    return line_size // WORD - 1


class RegistrationError(RuntimeError):
    """Client or server registration beyond the configured capacity."""


class NuddlePQ:
    """Shared state of the delegation layer.

    ``spray`` selects the base deleteMin used by servers: ``None`` for the
    exact variant, otherwise the relaxed spray with those parameters.

    With ``check_ownership`` enabled every slot access is validated against the
    single-writer rules of the protocol; violations are appended to
    :attr:`violations` instead of raising, so stress tests can count them.
    """

    def __init__(
        self,
        base: SkipListPQ,
        servers: int,
        max_clients: int,
        line_size: int = 64,
        *,
        spray: Optional[SprayParams] = None,
        check_ownership: bool = False,
    ) -> None:
        if servers < 1:
            raise ValueError(f"servers must be >= 1, got {servers}")
        if max_clients < 1:
            raise ValueError(f"max_clients must be >= 1, got {max_clients}")
        self.base_pq = base
        self.servers = servers
        self.line_size = line_size
        self.clnt_per_group = group_capacity(line_size)
        self.groups = (max_clients + self.clnt_per_group - 1) // self.clnt_per_group
        self.words_per_line = line_size // WORD
        self.spray = spray

        self.server_cnt = 0
        self.clients_cnt = 0
        self.group_cnt = 0
        self.global_lock = threading.Lock()

        n_slots = self.groups * self.clnt_per_group
        self._request_buf = bytearray(n_slots * line_size)
        self._response_buf = bytearray(self.groups * line_size)
        self.requests = memoryview(self._request_buf).cast("Q")
        self.responses = memoryview(self._response_buf).cast("Q")

        self.check_ownership = check_ownership
        self.violations: list[str] = []
        self._group_owner: dict[int, int] = {}

    @property
    def capacity(self) -> int:
        return self.groups * self.clnt_per_group

    def slot_offset(self, group: int, pos: int) -> int:
        return (group * self.clnt_per_group + pos) * self.words_per_line

    def response_offset(self, group: int) -> int:
        return group * self.words_per_line

    def toggle_index(self, group: int) -> int:
        return group * self.words_per_line + self.words_per_line - 1

    def pending(self, group: int, pos: int) -> bool:
        ctrl = self.requests[self.slot_offset(group, pos) + REQ_CTRL]
        resp_toggles = self.responses[self.toggle_index(group)]
        return (ctrl >> TOGGLE_SHIFT) != ((resp_toggles >> pos) & 1)

    def _make_client(self, group: int, pos: int) -> "ClientHandle":
        return ClientHandle(self, group, pos)

    def _make_server(self, index: int, groups: list[int], pinned: bool, core: Optional[int]) -> "ServerHandle":
        return ServerHandle(self, index, groups, pinned, core)

    def init_client(self) -> "ClientHandle":
        with self.global_lock:
            if self.group_cnt >= self.groups:
                raise RegistrationError(f"all {self.capacity} client slots are taken")
            group, pos = self.group_cnt, self.clients_cnt
            self.clients_cnt += 1
            if self.clients_cnt % self.clnt_per_group == 0:
                self.clients_cnt = 0
                self.group_cnt += 1
            return self._make_client(group, pos)

    def init_server(self, core: Optional[int] = None) -> "ServerHandle":
        """Register a server, pinning the calling thread to ``core`` if given.

        Groups are dealt out round-robin: server ``i`` owns every group ``g``
        with ``g % servers == i``.
        """
        pinned = False
        if core is not None:
            pinned = topology.pin_self(core)
            if not pinned:
                log.warning("could not pin server thread to context %s; running unpinned", core)
        with self.global_lock:
            if self.server_cnt >= self.servers:
                raise RegistrationError(f"all {self.servers} servers are already registered")
            index = self.server_cnt
            mine = [g for g in range(self.groups) if g % self.servers == index]
            for g in mine:
                self._group_owner[g] = index
            self.server_cnt += 1
            return self._make_server(index, mine, pinned, core)

    def _violation(self, msg: str) -> None:
        self.violations.append(msg)

    def __repr__(self) -> str:
        return (
            f"NuddlePQ(servers={self.servers}, groups={self.groups}, "
            f"clnt_per_group={self.clnt_per_group}, line_size={self.line_size})"
        )


class _SingleOwner:
    """Flags use of one handle from two threads at the same time."""

    __slots__ = ("_user",)

    def __init__(self) -> None:
        self._user: Optional[int] = None

    def enter(self, pq: NuddlePQ, what: str) -> None:
        me = threading.get_ident()
        if self._user is not None and self._user != me:
            pq._violation(f"{what}: handle used concurrently by two threads")
        self._user = me

    def leave(self) -> None:
        self._user = None


class ClientHandle:
    """One client's view of the delegation arrays. Single outstanding request."""

    def __init__(self, pq: NuddlePQ, group: int, pos: int) -> None:
        self.pq = pq
        self.group = group
        self.clnt_pos = pos
        self._req = pq.requests
        self._resp = pq.responses
        self._slot = pq.slot_offset(group, pos)
        self._result_idx = pq.response_offset(group) + pos
        self._toggle_idx = pq.toggle_index(group)
        self._toggle = 0
        self._owner = _SingleOwner()
        self.issued = 0
        self.answered = 0

    def _publish(self, op: int, key: int, value: int) -> None:
        pq = self.pq
        if pq.check_ownership:
            self._owner.enter(pq, f"client {self.group}/{self.clnt_pos}")
            if pq.pending(self.group, self.clnt_pos):
                pq._violation(f"client {self.group}/{self.clnt_pos}: publish while a request is pending")
        slot = self._slot
        req = self._req
        req[slot + REQ_KEY] = key
        req[slot + REQ_VALUE] = value
        self._toggle ^= 1
        # Control word last: op and toggle become visible together.
        req[slot + REQ_CTRL] = op | (self._toggle << TOGGLE_SHIFT)
        self.issued += 1

    def _wait(self) -> int:
        resp = self._resp
        idx = self._toggle_idx
        pos = self.clnt_pos
        want = self._toggle
        while (resp[idx] >> pos) & 1 != want:
            relax()
        result = resp[self._result_idx]
        self.answered += 1
        if self.pq.check_ownership:
            self._owner.leave()
        return result

    def insert_delegated(self, key: int, value: int = 0) -> bool:
        self._publish(OP_INSERT, key, value)
        return self._wait() == 1

    def delete_min_delegated(self) -> Optional[Entry]:
        self._publish(OP_DELETE_MIN, 0, 0)
        key = self._wait()
        if key == EMPTY:
            return None
        return Entry(key, self._req[self._slot + REQ_RET_VALUE])

    # The plain Nuddle client always delegates.
    insert = insert_delegated
    delete_min = delete_min_delegated

    def __repr__(self) -> str:
        return f"ClientHandle(group={self.group}, pos={self.clnt_pos})"


class ServerHandle:
    """A server's owned groups plus direct access to the base queue."""

    def __init__(self, pq: NuddlePQ, index: int, groups: list[int], pinned: bool, core: Optional[int]) -> None:
        self.pq = pq
        self.base_pq = pq.base_pq
        self.index = index
        self.my_groups = groups
        self.clnt_per_group = pq.clnt_per_group
        self.pinned = pinned
        self.core = core
        self._owner = _SingleOwner()
        self.served = 0
        self.publishes = 0
        self.passes_with_work = 0
        self.passes = 0

    def insert(self, key: int, value: int = 0) -> bool:
        return self.base_pq.insert(key, value)

    def delete_min(self) -> Optional[Entry]:
        return self.base_pq.delete_min(self.pq.spray)

    def serve_requests(self) -> int:
        """Run every pending request of the owned groups; return how many ran.

        Results for a group are buffered locally and the response line is
        written once, toggle word last, after the whole group is processed.
        """
        pq = self.pq
        if not self.my_groups:
            return 0
        check = pq.check_ownership
        if check:
            self._owner.enter(pq, f"server {self.index}")
        req = pq.requests
        resp = pq.responses
        base = self.base_pq
        spray = pq.spray
        cpg = self.clnt_per_group
        served = 0
        for g in self.my_groups:
            if check and pq._group_owner.get(g) != self.index:
                pq._violation(f"server {self.index} serving group {g} it does not own")
            t_idx = pq.toggle_index(g)
            r_off = pq.response_offset(g)
            toggles = resp[t_idx]
            new_toggles = toggles
            local: dict[int, int] = {}
            slot = pq.slot_offset(g, 0)
            for j in range(cpg):
                ctrl = req[slot]
                if (ctrl >> TOGGLE_SHIFT) != ((toggles >> j) & 1):
                    if not local:
                        self.passes_with_work += 1
                    op = ctrl & OP_MASK
                    if op == OP_INSERT:
                        local[j] = 1 if base.insert(req[slot + REQ_KEY], req[slot + REQ_VALUE]) else 0
                    elif op == OP_DELETE_MIN:
                        entry = base.delete_min(spray)
                        if entry is None:
                            local[j] = EMPTY
                        else:
                            local[j] = entry.key
                            req[slot + REQ_RET_VALUE] = entry.value
                    else:
                        if check:
                            pq._violation(f"group {g} pos {j}: pending slot with op {op}")
                        local[j] = 0
                    new_toggles ^= 1 << j
                slot += pq.words_per_line
            if local:
                for j, value in local.items():
                    resp[r_off + j] = value
                resp[t_idx] = new_toggles
                self.publishes += 1
                served += len(local)
        self.passes += 1
        self.served += served
        if check:
            self._owner.leave()
        return served

    def __repr__(self) -> str:
        return f"ServerHandle(index={self.index}, groups={self.my_groups}, pinned={self.pinned})"


def nuddle_init(
    base: SkipListPQ,
    servers: int,
    max_clients: int,
    line_size: int = 64,
    **kwargs,
) -> NuddlePQ:
    return NuddlePQ(base, servers, max_clients, line_size, **kwargs)


def init_client(pq: NuddlePQ) -> ClientHandle:
    return pq.init_client()


def init_server(pq: NuddlePQ, core: Optional[int] = None) -> ServerHandle:
    return pq.init_server(core)
