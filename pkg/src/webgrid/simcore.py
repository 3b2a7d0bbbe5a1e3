"""Discrete-event engine for a small web-grid of request-serving nodes.

Virtual time is a float of seconds. Events are ordered by ``(time, seq)``
where ``seq`` is a global insertion counter, so simultaneous events run in
the order they were scheduled.

A request's response time is the sum of the network delay, the dispatch
overhead, the time spent waiting in a node queue and its service time
``demand / speed``.  A request is *missed* when it is dropped on arrival at a
full queue, or when it could not complete within ``miss_deadline`` of being
sent.
"""
from __future__ import annotations

import enum
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .policies import PolicyKind, PolicyParams, PolicyState
    from .workload import WorkloadSpec


class InvalidConfig(ValueError):
    pass


class JobKind(str, enum.Enum):
    SIMPLE = "simple"
    COMPLEX = "complex"


class Outcome(enum.Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    MISSED = "missed"


class EventKind(enum.IntEnum):
    ARRIVAL = 0
    SERVICE_COMPLETION = 1
    MIGRATION_COMPLETE = 2
    POLICY_TICK = 3
    DEADLINE = 4


@dataclass(slots=True)
class Request:
    id: int
    kind: JobKind
    arrival_time: float
    demand: float
    dispatch_time: Optional[float] = None
    start_service_time: Optional[float] = None
    completion_time: Optional[float] = None
    assigned_node: Optional[int] = None
    outcome: Outcome = Outcome.PENDING
    dropped: bool = False
    migrations: int = 0
    in_transit: bool = False
    deadline_armed: bool = False

    @property
    def response_time(self) -> Optional[float]:
        if self.completion_time is None:
            return None
        return self.completion_time - self.arrival_time


@dataclass(slots=True)
class Node:
    id: int
    speed: float
    queue_capacity: int
    queue: deque = field(default_factory=deque)
    busy_until: float = 0.0
    in_service: Optional[Request] = None
    incoming: int = 0  # migrations in flight towards this node, holding a queue slot

    @property
    def outstanding(self) -> int:
        return len(self.queue) + self.incoming + (self.in_service is not None)

    @property
    def has_room(self) -> bool:
        return len(self.queue) + self.incoming < self.queue_capacity


@dataclass
class Cluster:
    """The node set as seen by the dispatch policies."""

    nodes: list[Node]
    reference_speed: float

    @classmethod
    def homogeneous(cls, n: int, speed: float, queue_capacity: int) -> "Cluster":
        return cls([Node(i, speed, queue_capacity) for i in range(n)], speed)

    def __len__(self) -> int:
        return len(self.nodes)

    def load(self, node: Node) -> float:
        """Backlog of ``node`` scaled by its speed relative to the nominal node."""
        return node.outstanding * self.reference_speed / node.speed

    def loads(self) -> list[float]:
        return [self.load(node) for node in self.nodes]


@dataclass(order=True, slots=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: tuple = field(compare=False, default=())


@dataclass
class SimConfig:
    n_nodes: int = 2
    node_speed: float = 1000.0
    simple_demand: float = 10.0
    complexity_ratio: float = 100.0
    network_delay: float = 0.001
    dispatch_overhead: float = 0.0005
    miss_deadline: float = 10.0
    queue_capacity: int = 100
    duration: float = 10.0
    seed: int = 0
    # per-node speeds; ``None`` means every node runs at ``node_speed``
    node_speeds: Optional[tuple[float, ...]] = None

    @property
    def complex_demand(self) -> float:
        return self.simple_demand * self.complexity_ratio

    def demand(self, kind: JobKind) -> float:
        return self.complex_demand if kind is JobKind.COMPLEX else self.simple_demand

    def validate(self) -> None:
        if self.n_nodes < 1:
            raise InvalidConfig(f"n_nodes must be >= 1, got {self.n_nodes}")
        for name in ("network_delay", "dispatch_overhead", "miss_deadline", "duration"):
            value = getattr(self, name)
            if not (value >= 0) or math.isnan(value):
                raise InvalidConfig(f"{name} must be >= 0, got {value}")
        if not self.node_speed > 0:
            raise InvalidConfig(f"node_speed must be > 0, got {self.node_speed}")
        if self.node_speeds is not None:
            if len(self.node_speeds) != self.n_nodes:
                raise InvalidConfig("node_speeds must list one speed per node")
            if any(not s > 0 for s in self.node_speeds):
                raise InvalidConfig("every node speed must be > 0")
        if not self.simple_demand > 0 or not self.complexity_ratio > 0:
            raise InvalidConfig("job demands must be > 0")
        if self.queue_capacity < 0:
            raise InvalidConfig("queue_capacity must be >= 0")

    def build_cluster(self) -> Cluster:
        speeds = self.node_speeds or (self.node_speed,) * self.n_nodes
        nodes = [Node(i, float(s), self.queue_capacity) for i, s in enumerate(speeds)]
        return Cluster(nodes, self.node_speed)


@dataclass
class SimResult:
    observations: list[Request]
    mean_response: float
    miss_count: int
    generated: int
    completed: int
    in_flight_at_end: int
    dropped: int = 0
    migrations: int = 0
    aborted_migrations: int = 0
    served_demand: float = 0.0

    @property
    def m(self) -> int:
        return self.miss_count

    @property
    def t(self) -> float:
        return self.mean_response


class Engine:
    """Single-threaded event loop over one cluster and one dispatch policy.

    ``arrivals`` are ``(send_time, kind)`` pairs. The request reaches the
    dispatcher ``network_delay + dispatch_overhead`` after being sent; the
    ARRIVAL event fires at that instant and the policy places it.
    """

    def __init__(
        self,
        config: SimConfig,
        policy: "PolicyState",
        arrivals: Iterable[tuple[float, JobKind]] = (),
    ):
        config.validate()
        self.config = config
        self.cluster = config.build_cluster()
        self.policy = policy
        self.rng = np.random.default_rng(config.seed)
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.requests: list[Request] = []
        self.completed = 0
        self.missed = 0
        self.dropped = 0
        self.migrations = 0
        self.aborted_migrations = 0
        self.served_demand = 0.0
        self.last_event_time = -math.inf

        lag = config.network_delay + config.dispatch_overhead
        for send_time, kind in arrivals:
            if send_time >= config.duration:
                continue
            req = Request(len(self.requests), kind, float(send_time), config.demand(kind))
            self.requests.append(req)
            self.schedule(req.arrival_time + lag, EventKind.ARRIVAL, (req,))

        if policy.has_ticks and len(self.cluster) > 1:
            interval = policy.params.tick_interval
            if interval < config.duration:
                self.schedule(interval, EventKind.POLICY_TICK)

    # -- event queue -------------------------------------------------------

    def schedule(self, time: float, kind: EventKind, payload: tuple = ()) -> Event:
        event = Event(time, self._seq, kind, payload)
        heapq.heappush(self._heap, (time, self._seq, event))
        self._seq += 1
        return event

    def step(self) -> Optional[Event]:
        """Pop and apply the earliest event; ``None`` once the horizon is reached."""
        if not self._heap or self._heap[0][0] > self.config.duration:
            return None
        time, _, event = heapq.heappop(self._heap)
        self.now = time
        self.last_event_time = time
        self._apply(event)
        return event

    def _apply(self, event: Event) -> None:
        kind = event.kind
        if kind is EventKind.ARRIVAL:
            self._on_arrival(event.payload[0])
        elif kind is EventKind.SERVICE_COMPLETION:
            self._on_completion(*event.payload)
        elif kind is EventKind.DEADLINE:
            self._on_deadline(event.payload[0])
        elif kind is EventKind.MIGRATION_COMPLETE:
            self._on_migration_complete(*event.payload)
        elif kind is EventKind.POLICY_TICK:
            self._on_tick()

    # -- request lifecycle -------------------------------------------------

    def _on_arrival(self, req: Request) -> None:
        now = self.now
        req.dispatch_time = now
        node = self.cluster.nodes[self.policy.assign(req, self.cluster, now)]
        self._admit(node, req)

    def _admit(self, node: Node, req: Request) -> None:
        req.assigned_node = node.id
        if node.in_service is None and not node.queue:
            self._start(node, req)
        elif len(node.queue) + node.incoming < node.queue_capacity:
            node.queue.append(req)
            self._arm_deadline(req)
        else:
            req.dropped = True
            self._miss(req)
            self.dropped += 1

    def _arm_deadline(self, req: Request) -> None:
        if not req.deadline_armed:
            req.deadline_armed = True
            self.schedule(req.arrival_time + self.config.miss_deadline, EventKind.DEADLINE, (req,))

    def _start(self, node: Node, req: Request) -> bool:
        """Begin service of ``req`` unless it is already bound to miss its deadline."""
        now = self.now
        finish = max(now, node.busy_until) + req.demand / node.speed
        if finish - req.arrival_time > self.config.miss_deadline:
            self._miss(req)
            return False
        req.start_service_time = max(now, node.busy_until)
        self.serve(node, req, now)
        node.in_service = req
        self.schedule(finish, EventKind.SERVICE_COMPLETION, (node, req))
        return True

    def serve(self, node: Node, request: Request, now: float) -> float:
        """Occupy ``node`` with ``request``; return its completion time."""
        completion = max(now, node.busy_until) + request.demand / node.speed
        node.busy_until = completion
        return completion

    def _on_completion(self, node: Node, req: Request) -> None:
        req.completion_time = self.now
        req.outcome = Outcome.COMPLETED
        self.completed += 1
        self.served_demand += req.demand
        node.in_service = None
        self._start_next(node)

    def _start_next(self, node: Node) -> None:
        while node.in_service is None and node.queue:
            self._start(node, node.queue.popleft())

    def _miss(self, req: Request) -> None:
        req.outcome = Outcome.MISSED
        self.missed += 1

    def _on_deadline(self, req: Request) -> None:
        if req.outcome is not Outcome.PENDING or req.start_service_time is not None:
            return
        if req.in_transit:
            # the slot reserved on the destination is released on landing
            self._miss(req)
            return
        self.cluster.nodes[req.assigned_node].queue.remove(req)
        self._miss(req)

    # -- migration ---------------------------------------------------------

    def migrate(self, request: Request, src: Node, dst: Node, now: float) -> Optional[Event]:
        """Move a waiting request from ``src`` to ``dst``.

        The request lands on ``dst`` after the policy's migration cost. If
        ``dst`` has no free queue slot the migration is aborted, nothing
        changes and ``aborted_migrations`` is incremented.
        """
        if dst.id == src.id:
            raise ValueError("migration needs distinct source and destination")
        if request not in src.queue:
            raise ValueError(f"request {request.id} is not waiting on node {src.id}")
        if not dst.has_room:
            self.aborted_migrations += 1
            return None
        src.queue.remove(request)
        dst.incoming += 1
        request.in_transit = True
        self.migrations += 1
        cost = self.policy.params.migration_cost
        return self.schedule(now + cost, EventKind.MIGRATION_COMPLETE, (request, dst))

    def _on_migration_complete(self, req: Request, dst: Node) -> None:
        dst.incoming -= 1
        req.in_transit = False
        if req.outcome is not Outcome.PENDING:
            return
        req.migrations += 1
        self._admit(dst, req)

    def _on_tick(self) -> None:
        for req, src, dst in self.policy.on_tick(self.cluster, self.rng, self.now):
            self.migrate(req, src, dst, self.now)
        nxt = self.now + self.policy.params.tick_interval
        if nxt < self.config.duration:
            self.schedule(nxt, EventKind.POLICY_TICK)

    # -- driving -----------------------------------------------------------

    def run(self) -> SimResult:
        while self.step() is not None:
            pass
        return self.result()

    def result(self) -> SimResult:
        done = [r.completion_time - r.arrival_time for r in self.requests if r.outcome is Outcome.COMPLETED]
        generated = len(self.requests)
        return SimResult(
            observations=self.requests,
            mean_response=math.fsum(done) / len(done) if done else 0.0,
            miss_count=self.missed,
            generated=generated,
            completed=self.completed,
            in_flight_at_end=generated - self.completed - self.missed,
            dropped=self.dropped,
            migrations=self.migrations,
            aborted_migrations=self.aborted_migrations,
            served_demand=self.served_demand,
        )


def run(
    config: SimConfig,
    policy: "PolicyKind | PolicyState",
    workload: "WorkloadSpec | Sequence[tuple[float, JobKind]]",
    params: "PolicyParams | None" = None,
) -> SimResult:
    """Simulate one workload under one policy up to ``config.duration``.

    ``workload`` may be a :class:`~webgrid.workload.WorkloadSpec` or an
    explicit list of ``(send_time, kind)`` arrivals.
    """
    from .policies import PolicyState
    from .workload import WorkloadSpec, generate

    config.validate()
    if isinstance(workload, WorkloadSpec):
        arrivals = generate(workload)
    else:
        arrivals = list(workload)
    state = policy if isinstance(policy, PolicyState) else PolicyState.create(policy, config.n_nodes, params)
    return Engine(config, state, arrivals).run()
