"""Master/trader/worker execution of the elimination-tree task graph.

One task = the condensation of one tree node (or, in the mirrored downward
phase, its back substitution). Traders own disjoint parts of the tree and
keep a dependency-tracked priority queue over their tasks: a task that still
waits on children has priority infinity, a ready task has priority equal to
minus its workload so the heaviest ready work is handed out first. Each
trader advertises at most one ready task at a time to the master, which
stores only (task id, trader id) tuples and serves worker requests
round-robin over traders with a pending advert. Workers loop

    TaskRequest -> Assign -> Fetch -> TaskData -> compute -> Result

and hold no data between tasks. Results are stored at the owning trader;
when the dependent task lives at another trader its input is forwarded
trader-to-trader, never through the master.

Execution is a deterministic discrete-event simulation. The clock is an
integer tick counter where one tick equals one unit of the workload
estimate (an elimination step); message latency is modeled as
``c0 + c1 * nbytes`` seconds converted at TICKS_PER_SECOND. Channels are
FIFO per sender/receiver pair. Because assembly is order-canonical the
computed solution is bitwise identical for every worker/trader count.
"""

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .errors import (
    InvalidArgumentError,
    ProtocolViolationError,
    SchedulerStallError,
)
from .metrics import level_cut_profile
from .solver import (
    RecordCache,
    Solution,
    assemble,
    back_substitute,
    condense,
    element_block,
)

__all__ = [
    "Task",
    "TaskGraph",
    "TraderQueue",
    "WorkerTrace",
    "RunResult",
    "TICKS_PER_SECOND",
    "build_task_graph",
    "trader_update",
    "run_parallel",
    "run_simulated",
    "run_static_levelcut",
    "verify_run",
    "downward_cost",
]

logger = logging.getLogger("dissect.scheduler")

TICKS_PER_SECOND = 1_000_000_000  # 1 tick == 1 elimination step at 1e9 steps/s
CONTROL_BYTES = 16  # routing tuples, requests, shutdowns

BLOCKED, READY, RUNNING, DONE = "blocked", "ready", "running", "done"


def _ticks(cost):
    return max(1, int(round(float(cost))))


def downward_cost(node):
    """Back-substitution flop estimate: two triangular solves plus coupling."""
    ni = len(node.eliminated_dofs)
    nb = len(node.interface_dofs)
    if ni == 0 and nb == 0:
        return float(max(1.0, node.workload * 0.05))
    return float(ni * ni + 2 * ni * nb)


# ---------------------------------------------------------------------------
# protocol messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskRequest:
    worker: int


@dataclass(frozen=True)
class Advert:
    trader: int
    task: int


@dataclass(frozen=True)
class Assign:
    task: int
    trader: int


@dataclass(frozen=True)
class Fetch:
    worker: int
    task: int


@dataclass(frozen=True)
class TaskData:
    task: int
    payload: Any
    nbytes: int


@dataclass(frozen=True)
class Result:
    worker: int
    task: int
    payload: Any
    nbytes: int


@dataclass(frozen=True)
class ResultForward:
    dest_task: int  # task whose dependency is being satisfied
    dep: int  # the completed task providing the data
    payload: Any
    nbytes: int


@dataclass(frozen=True)
class Shutdown:
    pass


def _msg_nbytes(msg):
    return getattr(msg, "nbytes", CONTROL_BYTES) or CONTROL_BYTES


# ---------------------------------------------------------------------------
# task graph and per-trader queues
# ---------------------------------------------------------------------------


@dataclass
class Task:
    node_id: int
    owner: int
    deps_unmet: int
    workload: float
    state: str = BLOCKED

    @property
    def priority(self):
        return math.inf if self.deps_unmet > 0 else -self.workload


@dataclass
class TaskGraph:
    direction: str  # "up" | "down"
    parent: dict
    children: dict
    owner: dict
    cost: dict  # node id -> simulated ticks
    deps: dict  # node id -> tuple of dependency task ids
    node_count: int

    def dependents(self, nid):
        if self.direction == "up":
            p = self.parent[nid]
            return (p,) if p is not None else ()
        return tuple(self.children[nid])


class TraderQueue:
    """Dependency-tracked priority queue over one trader's tasks."""

    def __init__(self, trader_id, graph):
        self.trader_id = trader_id
        self.graph = graph
        self.tasks = {}
        self.inputs = {}  # task -> {dep task id -> payload}
        self.outbox = []  # (dest trader, dest task, dep, payload) to forward
        self.root_completed = False
        self._heap = []
        self.ready_times = {}

    def add_task(self, nid):
        task = Task(
            node_id=nid,
            owner=self.trader_id,
            deps_unmet=len(self.graph.deps[nid]),
            workload=self.graph.cost[nid],
        )
        self.tasks[nid] = task
        self.inputs[nid] = {}
        if task.deps_unmet == 0:
            task.state = READY
            self.ready_times[nid] = 0
            heapq.heappush(self._heap, (task.priority, nid))
        return task

    def satisfy(self, task_id, dep, payload, now=0):
        """Store a dependency payload; returns [task_id] when it became ready."""
        task = self.tasks[task_id]
        store = self.inputs[task_id]
        if dep in store:
            raise ProtocolViolationError(
                f"duplicate completion of task {dep} delivered to task {task_id}"
            )
        store[dep] = payload
        task.deps_unmet -= 1
        if task.deps_unmet < 0:
            raise ProtocolViolationError(
                f"dependency count of task {task_id} went negative"
            )
        if task.deps_unmet == 0:
            task.state = READY
            self.ready_times[task_id] = now
            heapq.heappush(self._heap, (task.priority, task_id))
            return [task_id]
        return []

    def pop_ready(self):
        """Highest-priority ready task (largest workload, then smallest id)."""
        while self._heap:
            _, nid = heapq.heappop(self._heap)
            if self.tasks[nid].state == READY:
                return nid
        return None

    def has_ready(self):
        return any(t.state == READY for t in self.tasks.values())

    def unfinished(self):
        return sum(1 for t in self.tasks.values() if t.state != DONE)


def build_task_graph(tree, assignment, direction="up", costs=None, down_costs=None):
    """Task graph plus one TraderQueue per trader.

    costs/down_costs optionally override the per-node workload estimate
    (values are simulated ticks after rounding).
    """
    parent = {n.id: n.parent for n in tree.nodes}
    children = {n.id: tuple(n.children) for n in tree.nodes}
    owner = dict(assignment.owner)
    if direction == "up":
        deps = children
        base = costs if costs is not None else {n.id: n.workload for n in tree.nodes}
    elif direction == "down":
        deps = {
            n.id: (() if n.parent is None else (n.parent,)) for n in tree.nodes
        }
        if down_costs is not None:
            base = down_costs
        else:
            base = {n.id: downward_cost(n) for n in tree.nodes}
    else:
        raise InvalidArgumentError(f"unknown task graph direction {direction!r}")
    cost = {nid: _ticks(c) for nid, c in base.items()}
    graph = TaskGraph(
        direction=direction,
        parent=parent,
        children=children,
        owner=owner,
        cost=cost,
        deps=deps,
        node_count=len(tree.nodes),
    )
    queues = {t: TraderQueue(t, graph) for t in range(assignment.n_traders)}
    for n in tree.nodes:
        queues[owner[n.id]].add_task(n.id)
    return graph, queues


def trader_update(queue, completed, result, now=0):
    """Record a completed task at a trader; returns newly ready task ids.

    ``completed`` is either a task owned by this trader (a worker just
    returned its Result) or a foreign task whose data arrived via
    ResultForward. When the dependent task is owned elsewhere the payload is
    placed on ``queue.outbox`` for the caller to forward.
    """
    graph = queue.graph
    if completed in queue.tasks:
        task = queue.tasks[completed]
        if task.state == DONE:
            raise ProtocolViolationError(f"task {completed} completed twice")
        task.state = DONE
        task.deps_unmet = 0
    dependents = graph.dependents(completed)
    if not dependents:
        queue.root_completed = True
        return []
    newly_ready = []
    for dep_task in dependents:
        payload = result
        if graph.direction == "down" and isinstance(result, dict):
            payload = result.get(dep_task)
        if graph.owner[dep_task] == queue.trader_id:
            newly_ready.extend(queue.satisfy(dep_task, completed, payload, now=now))
        else:
            queue.outbox.append((graph.owner[dep_task], dep_task, completed, payload))
    return newly_ready


# ---------------------------------------------------------------------------
# transport and simulation core
# ---------------------------------------------------------------------------


class Transport:
    """FIFO message channels with a constant + per-byte latency model."""

    def __init__(self, sim, latency=(0.0, 0.0)):
        self.sim = sim
        c0, c1 = latency
        if c0 < 0 or c1 < 0:
            raise InvalidArgumentError("latency terms must be non-negative")
        self.base_ticks = int(round(c0 * TICKS_PER_SECOND))
        self.per_byte = c1 * TICKS_PER_SECOND
        self.last_arrival = {}
        self.bytes_by_channel = {}
        self.count_by_channel = {}

    def send(self, src, dst, msg):
        nbytes = _msg_nbytes(msg)
        chan = (src, dst)
        arrival = self.sim.now + self.base_ticks + int(round(self.per_byte * nbytes))
        arrival = max(arrival, self.last_arrival.get(chan, 0))
        self.last_arrival[chan] = arrival
        self.bytes_by_channel[chan] = self.bytes_by_channel.get(chan, 0) + nbytes
        self.count_by_channel[chan] = self.count_by_channel.get(chan, 0) + 1
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "t=%d %s -> %s %s (%d bytes)",
                self.sim.now,
                src,
                dst,
                type(msg).__name__,
                nbytes,
            )
        self.sim.push(arrival, ("msg", src, dst, msg))

    def bytes_through(self, name):
        return sum(
            b
            for (src, dst), b in self.bytes_by_channel.items()
            if src == name or dst == name
        )


class Simulation:
    """Single event heap: (tick, sequence) ordered, fully deterministic."""

    def __init__(self, latency=(0.0, 0.0)):
        self.now = 0
        self._heap = []
        self._seq = 0
        self.actors = {}
        self.transport = Transport(self, latency)

    def push(self, time, event):
        heapq.heappush(self._heap, (time, self._seq, event))
        self._seq += 1

    def call_at(self, time, fn):
        self.push(time, ("call", fn))

    def run(self):
        while self._heap:
            time, _, event = heapq.heappop(self._heap)
            self.now = max(self.now, time)
            if event[0] == "call":
                event[1]()
            else:
                _, src, dst, msg = event
                self.actors[dst].on_message(src, msg)


class MasterActor:
    """Routing-only coordinator: holds one (task, trader) tuple per trader."""

    def __init__(self, sim, n_traders, on_assign):
        self.sim = sim
        self.name = "master"
        self.n_traders = n_traders
        self.slots = [None] * n_traders
        self.rr = 0
        self.pending = deque()
        self.phase_over = False
        self.on_assign = on_assign

    def reset_phase(self):
        self.slots = [None] * self.n_traders
        self.pending.clear()
        self.phase_over = False

    def on_message(self, src, msg):
        if isinstance(msg, TaskRequest):
            if not self._assign(msg.worker):
                if self.phase_over:
                    self.sim.transport.send(self.name, ("worker", msg.worker), Shutdown())
                else:
                    self.pending.append(msg.worker)
        elif isinstance(msg, Advert):
            if self.slots[msg.trader] is not None:
                raise ProtocolViolationError(
                    f"trader {msg.trader} advertised while a tuple was pending"
                )
            self.slots[msg.trader] = msg.task
            if self.pending:
                self._assign(self.pending.popleft())
        else:
            raise ProtocolViolationError(f"master cannot handle {type(msg).__name__}")

    def _assign(self, worker):
        for step in range(self.n_traders):
            t = (self.rr + step) % self.n_traders
            if self.slots[t] is not None:
                task = self.slots[t]
                self.slots[t] = None
                self.rr = (t + 1) % self.n_traders
                self.on_assign(self.sim.now)
                self.sim.transport.send(self.name, ("worker", worker), Assign(task, t))
                return True
        return False

    def end_phase(self):
        self.phase_over = True
        while self.pending:
            w = self.pending.popleft()
            self.sim.transport.send(self.name, ("worker", w), Shutdown())


class TraderActor:
    """Owns a TraderQueue plus the task data; performs all data exchange."""

    def __init__(self, sim, trader_id, driver):
        self.sim = sim
        self.trader_id = trader_id
        self.name = ("trader", trader_id)
        self.driver = driver
        self.queue = None
        self.advertised = None

    def load_phase(self, queue):
        self.queue = queue
        self.advertised = None

    def kickoff(self):
        self._advertise()

    def _advertise(self):
        if self.advertised is not None or self.queue is None:
            return
        nid = self.queue.pop_ready()
        if nid is None:
            return
        self.advertised = nid
        self.sim.transport.send(self.name, "master", Advert(self.trader_id, nid))

    def on_message(self, src, msg):
        if isinstance(msg, Fetch):
            task = self.queue.tasks[msg.task]
            if task.state != READY:
                raise ProtocolViolationError(
                    f"fetch of task {msg.task} in state {task.state}"
                )
            task.state = RUNNING
            payload, nbytes = self.driver.build_payload(
                msg.task, self.queue.inputs[msg.task]
            )
            self.sim.transport.send(
                self.name, ("worker", msg.worker), TaskData(msg.task, payload, nbytes)
            )
            if self.advertised == msg.task:
                self.advertised = None
                self._advertise()
        elif isinstance(msg, Result):
            self.driver.note_result(self.sim.now)
            routed = self.driver.store_result(
                self.trader_id, msg.task, msg.payload, self.queue.inputs[msg.task]
            )
            trader_update(self.queue, msg.task, routed, now=self.sim.now)
            self._drain_outbox()
            self._advertise()
            self.driver.task_completed(msg.task)
        elif isinstance(msg, ResultForward):
            self.queue.satisfy(msg.dest_task, msg.dep, msg.payload, now=self.sim.now)
            self._advertise()
        else:
            raise ProtocolViolationError(f"trader cannot handle {type(msg).__name__}")

    def _drain_outbox(self):
        for dest_trader, dest_task, dep, payload in self.queue.outbox:
            self.sim.transport.send(
                self.name,
                ("trader", dest_trader),
                ResultForward(dest_task, dep, payload, self.driver.payload_nbytes(payload)),
            )
        self.queue.outbox.clear()


class WorkerActor:
    """Memoryless execution unit: computes one task, keeps nothing."""

    def __init__(self, sim, worker_id, driver):
        self.sim = sim
        self.worker_id = worker_id
        self.name = ("worker", worker_id)
        self.driver = driver
        self.held = None
        self.intervals = []  # (start, end, task, phase)
        self.stopped = False
        self._trader = None

    def request(self):
        if self.held is not None:
            self.driver.memory_violations.append(
                (self.worker_id, "payload retained at TaskRequest")
            )
        self.sim.transport.send(self.name, "master", TaskRequest(self.worker_id))

    def on_message(self, src, msg):
        if isinstance(msg, Assign):
            self.sim.transport.send(
                self.name, ("trader", msg.trader), Fetch(self.worker_id, msg.task)
            )
            self._trader = msg.trader
        elif isinstance(msg, TaskData):
            self.held = msg.payload
            start = self.sim.now
            duration = self.driver.task_cost(msg.task)
            result_payload, result_nbytes = self.driver.execute(msg.task, msg.payload)
            end = start + duration
            self.intervals.append((start, end, msg.task, self.driver.phase))
            self.driver.note_start(msg.task, start)
            trader = self._trader
            self.sim.call_at(
                end, lambda t=msg.task, rp=result_payload, rb=result_nbytes, tr=trader: self._finish(t, rp, rb, tr)
            )
        elif isinstance(msg, Shutdown):
            self.stopped = True
        else:
            raise ProtocolViolationError(f"worker cannot handle {type(msg).__name__}")

    def _finish(self, task, result_payload, result_nbytes, trader):
        self.sim.transport.send(
            self.name,
            ("trader", trader),
            Result(self.worker_id, task, result_payload, result_nbytes),
        )
        self.held = None
        if not self.stopped:
            self.request()


# ---------------------------------------------------------------------------
# run drivers
# ---------------------------------------------------------------------------


@dataclass
class WorkerTrace:
    worker_id: int
    intervals: list  # (start, end, task id) within one phase


@dataclass
class RunResult:
    """Everything a parallel run produces besides its numerical output."""

    solution: Optional[Solution]
    cache: Optional[RecordCache]
    intervals: list  # (worker, start, end, task, phase)
    spans: dict  # phase -> (first assign tick, last result tick)
    durations: dict  # (phase, task) -> ticks
    start_times: dict  # (phase, task) -> tick
    ready_times: dict  # (phase, task) -> tick
    n_workers: int
    n_traders: int
    task_count: int
    phases: tuple
    transport_bytes: dict
    transport_counts: dict
    memory_violations: list

    def traces(self, phase="up"):
        out = {w: [] for w in range(self.n_workers)}
        for worker, start, end, task, ph in self.intervals:
            if ph == phase:
                out[worker].append((start, end, task))
        return [WorkerTrace(worker_id=w, intervals=out[w]) for w in sorted(out)]

    def master_bytes(self):
        return sum(
            b
            for (src, dst), b in self.transport_bytes.items()
            if src == "master" or dst == "master"
        )

    def span(self, phase):
        if phase == "full":
            lo = min(s[0] for s in self.spans.values())
            hi = max(s[1] for s in self.spans.values())
            return lo, hi
        return self.spans[phase]


class _PhaseDriver:
    """Wires actors to the data plane for one phase of one run."""

    def __init__(self, run, graph, phase):
        self.run = run
        self.graph = graph
        self.phase = phase
        self.memory_violations = run.memory_violations
        self.first_assign = None
        self.last_result = None
        self.completed = 0

    # --- data plane hooks -------------------------------------------------
    def build_payload(self, task, inputs):
        return self.run.build_payload(self.phase, task, inputs)

    def execute(self, task, payload):
        return self.run.execute(self.phase, task, payload)

    def store_result(self, trader, task, payload, inputs):
        return self.run.store_result(self.phase, trader, task, payload, inputs)

    def payload_nbytes(self, payload):
        return self.run.payload_nbytes(payload)

    def task_cost(self, task):
        return self.graph.cost[task]

    # --- bookkeeping -------------------------------------------------------
    def note_assign(self, now):
        if self.first_assign is None:
            self.first_assign = now

    def note_result(self, now):
        self.last_result = now

    def note_start(self, task, now):
        self.run.start_times[(self.phase, task)] = now

    def task_completed(self, task):
        self.completed += 1
        if self.completed == self.graph.node_count:
            self.run.master.end_phase()


class _ProtocolRun:
    """Builds the actor set and runs the two protocol phases."""

    def __init__(self, tree, assignment, n_workers, latency, phases):
        if n_workers < 1:
            raise InvalidArgumentError("n_workers must be >= 1")
        self.tree = tree
        self.assignment = assignment
        self.n_workers = n_workers
        self.phases = phases
        self.sim = Simulation(latency=latency)
        self.memory_violations = []
        self.start_times = {}
        self.spans = {}
        self.durations = {}
        self.ready_times = {}
        self.master = MasterActor(
            self.sim, assignment.n_traders, on_assign=lambda now: None
        )
        self.sim.actors["master"] = self.master
        self.traders = []
        for t in range(assignment.n_traders):
            actor = TraderActor(self.sim, t, None)
            self.traders.append(actor)
            self.sim.actors[actor.name] = actor
        self.workers = []
        for w in range(n_workers):
            actor = WorkerActor(self.sim, w, None)
            self.workers.append(actor)
            self.sim.actors[actor.name] = actor

    # overridden by subclasses -----------------------------------------
    def build_payload(self, phase, task, inputs):
        raise NotImplementedError

    def execute(self, phase, task, payload):
        raise NotImplementedError

    def store_result(self, phase, trader, task, payload, inputs):
        raise NotImplementedError

    def payload_nbytes(self, payload):
        if payload is None:
            return CONTROL_BYTES
        if isinstance(payload, np.ndarray):
            return payload.nbytes or CONTROL_BYTES
        if hasattr(payload, "nbytes"):
            return payload.nbytes or CONTROL_BYTES
        return CONTROL_BYTES

    def make_graph(self, phase):
        raise NotImplementedError

    # --------------------------------------------------------------------
    def run_phase(self, phase):
        graph, queues = self.make_graph(phase)
        driver = _PhaseDriver(self, graph, phase)
        self.master.on_assign = driver.note_assign
        self.master.reset_phase()
        for actor in self.traders:
            actor.driver = driver
            actor.load_phase(queues[actor.trader_id])
        for actor in self.workers:
            actor.driver = driver
            actor.stopped = False
        for nid, ticks in graph.cost.items():
            self.durations[(phase, nid)] = ticks
        phase_start = self.sim.now
        for actor in self.traders:
            self.sim.call_at(phase_start, actor.kickoff)
        for actor in self.workers:
            self.sim.call_at(phase_start, actor.request)
        self.sim.run()
        unfinished = sum(q.unfinished() for q in queues.values())
        if unfinished:
            raise SchedulerStallError(
                f"{unfinished} tasks incomplete with no messages in flight "
                f"(phase {phase})"
            )
        for t, q in queues.items():
            for nid, when in q.ready_times.items():
                self.ready_times[(phase, nid)] = max(when, phase_start)
        self.spans[phase] = (
            driver.first_assign if driver.first_assign is not None else phase_start,
            driver.last_result if driver.last_result is not None else self.sim.now,
        )
        return graph

    def finish(self, solution=None, cache=None, task_count=None):
        intervals = []
        for w in self.workers:
            for (start, end, task, phase) in w.intervals:
                intervals.append((w.worker_id, start, end, task, phase))
        return RunResult(
            solution=solution,
            cache=cache,
            intervals=intervals,
            spans=self.spans,
            durations=self.durations,
            start_times=self.start_times,
            ready_times=self.ready_times,
            n_workers=self.n_workers,
            n_traders=self.assignment.n_traders,
            task_count=task_count if task_count is not None else len(self.tree.nodes),
            phases=self.phases,
            transport_bytes=dict(self.sim.transport.bytes_by_channel),
            transport_counts=dict(self.sim.transport.count_by_channel),
            memory_violations=self.memory_violations,
        )


class _RealRun(_ProtocolRun):
    """Protocol run that performs the actual condensation arithmetic."""

    def __init__(self, tree, mesh, assignment, n_workers, latency):
        super().__init__(tree, assignment, n_workers, latency, ("up", "down"))
        self.mesh = mesh
        self.cache = RecordCache()
        self.values = np.zeros(mesh.n_dofs)

    def make_graph(self, phase):
        return build_task_graph(self.tree, self.assignment, direction=phase)

    def build_payload(self, phase, task, inputs):
        node = self.tree.nodes[task]
        if phase == "up":
            if node.is_leaf:
                contribs = (element_block(self.mesh.element_by_id(node.element)),)
            else:
                contribs = tuple(inputs[c] for c in sorted(inputs))
            nbytes = sum(c.nbytes for c in contribs) + 8 * (
                len(node.eliminated_dofs) + len(node.interface_dofs)
            )
            return (node, contribs), nbytes
        record = self.cache.records[task]
        u_b = inputs[node.parent] if node.parent is not None else np.zeros(0)
        return (record, u_b), record.nbytes + u_b.nbytes

    def execute(self, phase, task, payload):
        if phase == "up":
            node, contribs = payload
            contribution, record = condense(assemble(contribs, node))
            return (contribution, record), contribution.nbytes + record.nbytes
        record, u_b = payload
        u_i = back_substitute(record, u_b)
        return u_i, u_i.nbytes

    def store_result(self, phase, trader, task, payload, inputs):
        node = self.tree.nodes[task]
        if phase == "up":
            contribution, record = payload
            self.cache.contributions[task] = contribution
            self.cache.records[task] = record
            return contribution
        u_i = payload
        if len(node.eliminated_dofs):
            self.values[np.asarray(node.eliminated_dofs, dtype=np.int64)] = u_i
        # frontier = this node's eliminated values plus the u_b it received;
        # each child's interface is a subset of that
        frontier = {}
        u_b = inputs.get(node.parent) if node.parent is not None else np.zeros(0)
        if u_b is None:
            u_b = np.zeros(0)
        for d, v in zip(node.interface_dofs, u_b):
            frontier[int(d)] = v
        for d, v in zip(node.eliminated_dofs, u_i):
            frontier[int(d)] = v
        out = {}
        for c in node.children:
            child = self.tree.nodes[c]
            out[c] = np.array([frontier[int(d)] for d in child.interface_dofs])
        return out

    def solve(self):
        self.run_phase("up")
        self.run_phase("down")
        solution = Solution(values=self.values)
        return self.finish(solution=solution, cache=self.cache)


class _SyntheticRun(_ProtocolRun):
    """Protocol run over synthetic costs: no numerics, payloads are sizes."""

    def __init__(
        self,
        tree,
        assignment,
        n_workers,
        latency,
        phases,
        costs,
        down_costs,
        payload_bytes,
    ):
        super().__init__(tree, assignment, n_workers, latency, phases)
        self.costs = costs
        self.down_costs = down_costs
        self.payload_fn = payload_bytes

    def _bytes_for(self, task):
        if self.payload_fn is None:
            return 64
        if callable(self.payload_fn):
            return int(self.payload_fn(task))
        return int(self.payload_fn.get(task, 64))

    def make_graph(self, phase):
        return build_task_graph(
            self.tree,
            self.assignment,
            direction=phase,
            costs=self.costs,
            down_costs=self.down_costs,
        )

    def build_payload(self, phase, task, inputs):
        return None, self._bytes_for(task)

    def execute(self, phase, task, payload):
        return None, self._bytes_for(task)

    def store_result(self, phase, trader, task, payload, inputs):
        return None

    def solve(self):
        for phase in self.phases:
            self.run_phase(phase)
        return self.finish(task_count=len(self.tree.nodes))


def run_parallel(tree, mesh, assignment, n_workers, latency=(0.0, 0.0)):
    """Full protocol solve: condensation phase, then mirrored back substitution.

    Returns a RunResult whose solution is bitwise identical to
    ``solve_sequential`` for every worker and trader count.
    """
    return _RealRun(tree, mesh, assignment, n_workers, latency).solve()


def run_simulated(
    tree,
    assignment,
    n_workers,
    latency=(0.0, 0.0),
    costs=None,
    down_costs=None,
    payload_bytes=None,
    phases=("up",),
):
    """Protocol run without numerics, for scheduling and load-balance studies."""
    return _SyntheticRun(
        tree, assignment, n_workers, latency, phases, costs, down_costs, payload_bytes
    ).solve()


# ---------------------------------------------------------------------------
# static level-cut baseline
# ---------------------------------------------------------------------------


def _levelcut_assignment(tree, n_workers):
    """Fixed node -> worker map: depth-L subtrees round-robin, parents follow
    their first child."""
    n_leaves = sum(1 for n in tree.nodes if n.is_leaf)
    level, _ = level_cut_profile(n_leaves)
    level = min(level, tree.depth)
    cut_roots = [
        n.id
        for n in tree.nodes
        if n.depth == level or (n.is_leaf and n.depth < level)
    ]
    cut_roots.sort()
    worker_of = {}

    def paint(nid, w):
        worker_of[nid] = w
        for c in tree.nodes[nid].children:
            paint(c, w)

    for i, nid in enumerate(cut_roots):
        paint(nid, i % n_workers)
    for nid in reversed(tree.pre_order()):  # post-ish order: children first
        if nid not in worker_of:
            node = tree.nodes[nid]
            worker_of[nid] = worker_of[node.children[0]]
    return worker_of


def run_static_levelcut(tree, n_workers, mesh=None, costs=None):
    """List-scheduled baseline with a fixed level-cut worker assignment.

    Each depth-L subtree is bound to one worker (round-robin when there are
    more subtrees than workers); inner nodes above the cut run on the worker
    of their first child. No re-balancing happens at runtime, which is
    exactly the behaviour the dynamic protocol is meant to beat.
    """
    if n_workers < 1:
        raise InvalidArgumentError("n_workers must be >= 1")
    worker_of = _levelcut_assignment(tree, n_workers)
    phases = ("up", "down") if mesh is not None else ("up",)

    cache = RecordCache()
    values = np.zeros(mesh.n_dofs) if mesh is not None else None
    intervals = []
    spans = {}
    durations = {}
    start_times = {}
    ready_times = {}
    clock = 0

    for phase in phases:
        if phase == "up":
            cost = {
                n.id: _ticks(costs[n.id] if costs is not None else n.workload)
                for n in tree.nodes
            }
            deps_of = {n.id: tuple(n.children) for n in tree.nodes}
            dependents = {
                n.id: ((n.parent,) if n.parent is not None else ()) for n in tree.nodes
            }
        else:
            cost = {n.id: _ticks(downward_cost(n)) for n in tree.nodes}
            deps_of = {
                n.id: (() if n.parent is None else (n.parent,)) for n in tree.nodes
            }
            dependents = {n.id: tuple(n.children) for n in tree.nodes}
        for nid, t in cost.items():
            durations[(phase, nid)] = t

        deps_left = {nid: len(d) for nid, d in deps_of.items()}
        ready = {w: [] for w in range(n_workers)}
        for nid, left in deps_left.items():
            if left == 0:
                heapq.heappush(ready[worker_of[nid]], (-cost[nid], nid))
                ready_times[(phase, nid)] = clock
        free_at = {w: clock for w in range(n_workers)}
        events = []  # (end, seq, worker, task)
        seq = 0
        done = 0

        def execute_task(nid):
            if mesh is None:
                return
            node = tree.nodes[nid]
            if phase == "up":
                if node.is_leaf:
                    contribs = [element_block(mesh.element_by_id(node.element))]
                else:
                    contribs = [cache.contributions[c] for c in node.children]
                contribution, record = condense(assemble(contribs, node))
                cache.contributions[nid] = contribution
                cache.records[nid] = record
            else:
                record = cache.records[nid]
                u_b = (
                    values[record.interface_dofs]
                    if len(record.interface_dofs)
                    else np.zeros(0)
                )
                u_i = back_substitute(record, u_b)
                if len(record.interior_dofs):
                    values[record.interior_dofs] = u_i

        def start_ready(w, now):
            nonlocal seq
            while ready[w] and free_at[w] <= now:
                _, nid = heapq.heappop(ready[w])
                start = now
                end = start + cost[nid]
                intervals.append((w, start, end, nid, phase))
                start_times[(phase, nid)] = start
                execute_task(nid)
                free_at[w] = end
                heapq.heappush(events, (end, seq, w, nid))
                seq += 1
                break

        phase_start = clock
        for w in range(n_workers):
            start_ready(w, phase_start)
        while events:
            end, _, w, nid = heapq.heappop(events)
            clock = max(clock, end)
            done += 1
            for dep_task in dependents[nid]:
                deps_left[dep_task] -= 1
                if deps_left[dep_task] == 0:
                    heapq.heappush(
                        ready[worker_of[dep_task]], (-cost[dep_task], dep_task)
                    )
                    ready_times[(phase, dep_task)] = end
            for wk in range(n_workers):
                start_ready(wk, clock)
        if done != len(tree.nodes):
            raise SchedulerStallError(
                f"static schedule stalled with {len(tree.nodes) - done} tasks left"
            )
        spans[phase] = (phase_start, clock)

    solution = Solution(values=values) if mesh is not None else None
    return RunResult(
        solution=solution,
        cache=cache if mesh is not None else None,
        intervals=intervals,
        spans=spans,
        durations=durations,
        start_times=start_times,
        ready_times=ready_times,
        n_workers=n_workers,
        n_traders=0,
        task_count=len(tree.nodes),
        phases=phases,
        transport_bytes={},
        transport_counts={},
        memory_violations=[],
    )


# ---------------------------------------------------------------------------
# trace verification
# ---------------------------------------------------------------------------


def verify_run(result, tree):
    """Check safety invariants of a finished run from its recorded telemetry.

    Returns a dict of findings; everything empty/True means the run was clean:
    exactly-once execution, no compute before the last dependency arrived,
    and no retained worker payloads.
    """
    findings = {
        "duplicate_tasks": [],
        "missing_tasks": [],
        "dependency_violations": [],
        "memory_violations": list(result.memory_violations),
    }
    for phase in result.phases:
        seen = {}
        for worker, start, end, task, ph in result.intervals:
            if ph != phase:
                continue
            seen[task] = seen.get(task, 0) + 1
        for n in tree.nodes:
            count = seen.get(n.id, 0)
            if count == 0:
                findings["missing_tasks"].append((phase, n.id))
            elif count > 1:
                findings["duplicate_tasks"].append((phase, n.id))
        for n in tree.nodes:
            start = result.start_times.get((phase, n.id))
            ready = result.ready_times.get((phase, n.id), 0)
            if start is None:
                continue
            if start < ready:
                findings["dependency_violations"].append((phase, n.id, start, ready))
            deps = n.children if phase == "up" else ([n.parent] if n.parent is not None else [])
            for dep in deps:
                dep_start = result.start_times.get((phase, dep))
                dep_end = dep_start + result.durations[(phase, dep)] if dep_start is not None else None
                if dep_end is not None and start < dep_end:
                    findings["dependency_violations"].append(
                        (phase, n.id, start, dep_end)
                    )
    findings["clean"] = not (
        findings["duplicate_tasks"]
        or findings["missing_tasks"]
        or findings["dependency_violations"]
        or findings["memory_violations"]
    )
    return findings
