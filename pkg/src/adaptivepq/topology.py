"""Hardware-context discovery, thread pinning and thread placement.

Discovery reads ``/sys/devices/system/node`` on Linux. The environment
variable ``ADAPTIVEPQ_TOPOLOGY="nodes=N,cpn=M"`` replaces it with a
deterministic simulated machine of ``N`` nodes with ``M`` contexts each
(node ``n`` owns contexts ``n*M .. n*M+M-1``), so placement logic can be
exercised on any laptop.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["Topology", "ENV_VAR", "parse_spec", "simulated", "discover", "placement", "pin_self"]

ENV_VAR = "ADAPTIVEPQ_TOPOLOGY"
_SYSFS_NODES = Path("/sys/devices/system/node")


@dataclass(frozen=True)
class Topology:
    nodes: tuple[int, ...]
    # contexts of each node, in ascending id order
    node_contexts: dict[int, tuple[int, ...]] = field(hash=False)
    simulated: bool = False

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for node in self.nodes:
            ctxs = self.node_contexts.get(node, ())
            if not ctxs:
                raise ValueError(f"node {node} has no hardware contexts")
            overlap = seen.intersection(ctxs)
            if overlap:
                raise ValueError(f"contexts {sorted(overlap)} belong to more than one node")
            seen.update(ctxs)

    @property
    def contexts(self) -> list[int]:
        return sorted(c for n in self.nodes for c in self.node_contexts[n])

    @property
    def n_contexts(self) -> int:
        return sum(len(self.node_contexts[n]) for n in self.nodes)

    @property
    def contexts_per_node(self) -> int:
        """Contexts on the smallest node (nodes are usually symmetric)."""
        return min(len(self.node_contexts[n]) for n in self.nodes)

    @property
    def mapping(self) -> dict[int, int]:
        return {c: n for n in self.nodes for c in self.node_contexts[n]}

    def node_of(self, ctx: int) -> int:
        return self.mapping[ctx]


def parse_spec(spec: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*nodes\s*=\s*(\d+)\s*,\s*cpn\s*=\s*(\d+)\s*", spec)
    if not m:
        raise ValueError(f"bad topology spec {spec!r}; expected 'nodes=N,cpn=M'")
    nodes, cpn = int(m.group(1)), int(m.group(2))
    if nodes < 1 or cpn < 1:
        raise ValueError(f"topology spec needs nodes >= 1 and cpn >= 1, got {spec!r}")
    return nodes, cpn


def simulated(spec: str) -> Topology:
    nodes, cpn = parse_spec(spec)
    return Topology(
        nodes=tuple(range(nodes)),
        node_contexts={n: tuple(range(n * cpn, (n + 1) * cpn)) for n in range(nodes)},
        simulated=True,
    )


def _parse_cpulist(text: str) -> list[int]:
    cpus: list[int] = []
    for part in text.strip().split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            cpus.extend(range(int(lo), int(hi) + 1))
        else:
            cpus.append(int(part))
    return cpus


def _read_sysfs(root: Path) -> Topology | None:
    node_contexts: dict[int, tuple[int, ...]] = {}
    for entry in sorted(root.glob("node[0-9]*")):
        try:
            cpus = _parse_cpulist((entry / "cpulist").read_text())
        except OSError:
            continue
        if cpus:
            node_contexts[int(entry.name[4:])] = tuple(sorted(cpus))
    if not node_contexts:
        return None
    return Topology(nodes=tuple(sorted(node_contexts)), node_contexts=node_contexts)


def discover(spec: str | None = None, sysfs: Path = _SYSFS_NODES) -> Topology:
    """Best available topology; never fails.

    ``spec`` (or the environment variable) forces a simulated topology.
    """
    spec = spec or os.environ.get(ENV_VAR)
    if spec:
        return simulated(spec)
    topo = _read_sysfs(sysfs)
    if topo is not None:
        return topo
    try:
        ctxs = tuple(sorted(os.sched_getaffinity(0)))
    except (AttributeError, OSError):
        ctxs = tuple(range(os.cpu_count() or 1))
    return Topology(nodes=(0,), node_contexts={0: ctxs}, simulated=True)


def placement(topo: Topology, n_servers: int, n_clients: int, group: int) -> list[tuple[str, int]]:
    """Assign hardware contexts to threads.

    Servers take node 0's contexts in order. Clients are cut into consecutive
    groups of ``group``; group ``k`` goes to node ``k mod n_nodes`` and takes
    that node's next free contexts. A node that runs out of contexts wraps
    around to its first one (oversubscription).
    """
    if group < 1:
        raise ValueError(f"group size must be >= 1, got {group}")
    node0 = topo.node_contexts[topo.nodes[0]]
    if n_servers > len(node0):
        raise ValueError(f"{n_servers} servers do not fit on node 0 ({len(node0)} contexts)")
    cursor = {n: 0 for n in topo.nodes}
    out: list[tuple[str, int]] = []
    for _ in range(n_servers):
        out.append(("server", node0[cursor[topo.nodes[0]]]))
        cursor[topo.nodes[0]] += 1
    for i in range(n_clients):
        node = topo.nodes[(i // group) % len(topo.nodes)]
        ctxs = topo.node_contexts[node]
        out.append(("client", ctxs[cursor[node] % len(ctxs)]))
        cursor[node] += 1
    return out


def pin_self(ctx: int, topo: Topology | None = None) -> bool:
    """Pin the calling thread to ``ctx``; ``False`` if that is not possible."""
    if topo is not None and topo.simulated:
        return False
    if topo is None and os.environ.get(ENV_VAR):
        return False
    if not hasattr(os, "sched_setaffinity"):
        return False
    try:
        # pid 0 targets the calling thread on Linux.
        os.sched_setaffinity(0, {ctx})
    except (OSError, ValueError, OverflowError):
        return False
    return True
