"""Request placement and migration strategies.

Three SSI-style strategies plus two per-request baselines:

``kerrighed``
    Placement-blind round robin on every new request, plus a periodic
    rebalance that moves one waiting request from each overloaded node to an
    underloaded partner.
``mosix``
    Decentralised: every node keeps a possibly stale view of the others'
    loads, refreshed by random gossip each tick. Placement uses the entry
    node's view; each node then decides on its own whether to push work to
    the least loaded node it knows of.
``lvs``
    A director with exact knowledge sends each request to the least loaded
    node that still has queue room.
``rr`` / ``lbsf``
    Plain round robin and least-outstanding-requests dispatch.

Ties always go to the lowest node id. Requests already in service are never
migrated.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .simcore import Cluster, Node, Request


class PolicyKind(str, enum.Enum):
    KERRIGHED = "kerrighed"
    MOSIX = "mosix"
    LVS = "lvs"
    ROUND_ROBIN = "rr"
    LEAST_BUSY = "lbsf"

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        key = name.strip().lower()
        aliases = {
            "kerrighedrr": cls.KERRIGHED,
            "mosixdynamic": cls.MOSIX,
            "openmosix": cls.MOSIX,
            "lvsleastloaded": cls.LVS,
            "openssi": cls.LVS,
            "roundrobin": cls.ROUND_ROBIN,
            "leastbusyfirst": cls.LEAST_BUSY,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


SSI_POLICIES = (PolicyKind.KERRIGHED, PolicyKind.MOSIX, PolicyKind.LVS)


@dataclass(frozen=True)
class PolicyParams:
    tick_interval: float = 0.1
    imbalance_threshold: float = 2.0
    gossip_fanout: int = 1
    migration_cost: float = 0.01

    def validate(self, n_nodes: int) -> None:
        if not self.tick_interval > 0:
            raise ValueError("tick_interval must be > 0")
        if not self.imbalance_threshold > 0:
            raise ValueError("imbalance_threshold must be > 0")
        if self.migration_cost < 0:
            raise ValueError("migration_cost must be >= 0")
        if n_nodes > 1 and not 1 <= self.gossip_fanout <= n_nodes - 1:
            raise ValueError(f"gossip_fanout must lie in [1, {n_nodes - 1}]")


@dataclass
class LoadView:
    """What ``owner`` believes about every node's load, and since when."""

    owner: int
    loads: list[float]
    as_of: list[float]

    @classmethod
    def blank(cls, owner: int, n: int) -> "LoadView":
        return cls(owner, [0.0] * n, [0.0] * n)

    def refresh_self(self, cluster: Cluster, now: float) -> None:
        self.loads[self.owner] = cluster.load(cluster.nodes[self.owner])
        self.as_of[self.owner] = now


class Migration(NamedTuple):
    request: Request
    src: Node
    dst: Node


@dataclass
class PolicyState:
    kind: PolicyKind
    params: PolicyParams
    n_nodes: int
    rr_cursor: int = 0
    load_views: list[LoadView] = field(default_factory=list)
    entry_node: int = 0

    @classmethod
    def create(cls, kind: PolicyKind | str, n_nodes: int, params: Optional[PolicyParams] = None) -> "PolicyState":
        if isinstance(kind, str) and not isinstance(kind, PolicyKind):
            kind = PolicyKind.parse(kind)
        params = params or PolicyParams()
        params.validate(n_nodes)
        views = []
        if kind is PolicyKind.MOSIX:
            views = [LoadView.blank(i, n_nodes) for i in range(n_nodes)]
        return cls(kind, params, n_nodes, load_views=views)

    @property
    def has_ticks(self) -> bool:
        return self.kind in (PolicyKind.KERRIGHED, PolicyKind.MOSIX)

    def assign(self, request: Request, cluster: Cluster, now: float) -> int:
        return assign(self, request, cluster, now)

    def on_tick(self, cluster: Cluster, rng: np.random.Generator, now: float) -> list[Migration]:
        if self.kind is PolicyKind.KERRIGHED:
            return kerrighed_rebalance(self, cluster, now)
        if self.kind is PolicyKind.MOSIX:
            mosix_disseminate(self, cluster, rng, now)
            moves = []
            for node in cluster.nodes:
                move = mosix_consider_migration(self, node, cluster, now)
                if move is not None:
                    moves.append(move)
            return moves
        return []


def _argmin(values) -> int:
    # first index of the minimum, i.e. ties go to the lowest node id
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def assign(state: PolicyState, request: Request, cluster: Cluster, now: float) -> int:
    kind = state.kind
    if kind is PolicyKind.KERRIGHED or kind is PolicyKind.ROUND_ROBIN:
        return kerrighed_assign(state, request, cluster)
    if kind is PolicyKind.LVS:
        return lvs_assign(state, request, cluster, now)
    if kind is PolicyKind.LEAST_BUSY:
        return lbsf_assign(state, request, cluster)
    return mosix_assign(state, request, cluster, now)


def kerrighed_assign(state: PolicyState, request: Request, cluster: Cluster) -> int:
    """Round robin over nodes, blind to their load. Also serves plain RR."""
    node = state.rr_cursor % len(cluster)
    state.rr_cursor = (node + 1) % len(cluster)
    return node


def lbsf_assign(state: PolicyState, request: Request, cluster: Cluster) -> int:
    return _argmin([node.outstanding for node in cluster.nodes])


def lvs_assign(state: PolicyState, request: Request, cluster: Cluster, now: float) -> int:
    loads = cluster.loads()
    open_nodes = [i for i, node in enumerate(cluster.nodes) if node.has_room]
    if not open_nodes:
        return _argmin(loads)
    return min(open_nodes, key=lambda i: (loads[i], i))


def kerrighed_rebalance(state: PolicyState, cluster: Cluster, now: float) -> list[Migration]:
    """Pair the most loaded nodes with the least loaded ones.

    Each pair whose load gap exceeds the threshold yields one migration of the
    most recently queued request.
    """
    loads = cluster.loads()
    order = sorted(range(len(loads)), key=lambda i: (loads[i], i))
    moves = []
    lo, hi = 0, len(order) - 1
    while lo < hi:
        src, dst = cluster.nodes[order[hi]], cluster.nodes[order[lo]]
        if loads[src.id] - loads[dst.id] <= state.params.imbalance_threshold:
            break
        if src.queue:
            moves.append(Migration(src.queue[-1], src, dst))
        lo += 1
        hi -= 1
    return moves


def mosix_local_load(node: Node, cluster: Cluster, now: float) -> float:
    """Queued plus in-service requests, divided by the node's relative speed."""
    return cluster.load(node)


def mosix_assign(state: PolicyState, request: Request, cluster: Cluster, now: float) -> int:
    """Place on the node that looks least loaded from the entry node.

    The entry node bumps its belief about the chosen node, since it knows it
    just handed that node one more request.
    """
    view = state.load_views[state.entry_node]
    view.refresh_self(cluster, now)
    target = _argmin(view.loads)
    if target != state.entry_node:
        view.loads[target] += cluster.reference_speed / cluster.nodes[target].speed
    return target


def mosix_disseminate(state: PolicyState, cluster: Cluster, rng: np.random.Generator, now: float) -> list[LoadView]:
    """Each node tells ``gossip_fanout`` random other nodes its current load."""
    n = len(cluster)
    fanout = state.params.gossip_fanout
    for view in state.load_views:
        view.refresh_self(cluster, now)
    if n < 2:
        return state.load_views
    current = cluster.loads()
    for sender in range(n):
        picks = rng.choice(n - 1, size=fanout, replace=False)
        for p in picks:
            recipient = int(p) + (p >= sender)
            view = state.load_views[recipient]
            view.loads[sender] = current[sender]
            view.as_of[sender] = now
    return state.load_views


def mosix_consider_migration(state: PolicyState, node: Node, cluster: Cluster, now: float) -> Optional[Migration]:
    """Push one waiting request to the least loaded node this node knows of."""
    if not node.queue or len(cluster) < 2:
        return None
    view = state.load_views[node.id]
    view.refresh_self(cluster, now)
    own = view.loads[node.id]
    candidates = [(load, i) for i, load in enumerate(view.loads) if i != node.id]
    best_load, best = min(candidates)
    if own - best_load <= state.params.imbalance_threshold:
        return None
    # the sender now expects the target to carry the extra request
    view.loads[best] += cluster.reference_speed / cluster.nodes[best].speed
    return Migration(node.queue[-1], node, cluster.nodes[best])
