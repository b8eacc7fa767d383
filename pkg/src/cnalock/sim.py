"""Deterministic interleaving simulator, sequential two-queue oracle, metrics.

Every simulated thread runs the real lock code (the step generators of
:mod:`cnalock.cna`, :mod:`cnalock.baseline`, :mod:`cnalock.wordlock`).  One
scheduler step resumes one thread for exactly one shared-memory action; a
thread blocked in a wait loop is enabled only once its condition holds, so a
spinning thread never burns steps.

Each thread loops ``acquisitions`` times over::

    acquire -> read shared counter -> (CS step) -> write counter + 1 -> release

so a mutual-exclusion failure shows up both as an overlap and as a lost
increment.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field, replace
from itertools import cycle
from typing import Callable, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

from .base import NodeRegistry
from .baseline import McsLock, TasLock, TicketLock
from .cna import AtomicOpCounter, CnaLock, FairnessPolicy, XorShift32
from .topology import TopologyProvider
from .wordlock import PoolRegistry, WordLock

EXHAUSTIVE_MAX_THREADS = 3
EXHAUSTIVE_MAX_DEPTH = 64
# the lock-level vocabulary of a trace; the rest (link, decide, draw,
# grant_store) is protocol detail kept for oracles and debugging
PUBLIC_EVENTS = frozenset(
    {"enqueue", "grant", "release", "move_to_secondary", "splice_secondary", "flush_draw"}
)


class SimError(Exception):
    pass


class DeadlockError(SimError):
    pass


class ScheduleError(SimError):
    pass


class BoundExceededError(SimError):
    pass


class MutualExclusionError(SimError):
    pass


class InvariantError(SimError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """What to simulate.

    ``draws`` replaces the per-thread generators with a script consumed (and
    cycled) in release order, which makes fairness decisions independent of
    the schedule.
    """

    sockets: Tuple[int, ...]
    acquisitions: Union[int, Tuple[int, ...]] = 1
    lock: str = "cna"
    policy: FairnessPolicy = FairnessPolicy()
    draws: Optional[Tuple[int, ...]] = None
    mode: str = "random"
    depth_bound: int = EXHAUSTIVE_MAX_DEPTH
    seed: int = 0
    schedules: int = 1
    check_invariants: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "sockets", tuple(self.sockets))
        if isinstance(self.acquisitions, int):
            object.__setattr__(self, "acquisitions", (self.acquisitions,) * len(self.sockets))
        else:
            object.__setattr__(self, "acquisitions", tuple(self.acquisitions))
        if self.draws is not None:
            object.__setattr__(self, "draws", tuple(self.draws))
        if len(self.acquisitions) != len(self.sockets):
            raise ValueError("need one acquisition count per thread")
        if any(s < 0 for s in self.sockets):
            raise ValueError("socket ids must be >= 0")
        if self.mode not in ("exhaustive", "random"):
            raise ValueError(f"unknown scheduler mode {self.mode!r}")
        if self.mode == "exhaustive" and (self.threads > EXHAUSTIVE_MAX_THREADS or self.depth_bound > EXHAUSTIVE_MAX_DEPTH):
            raise ValueError(
                f"exhaustive mode needs <= {EXHAUSTIVE_MAX_THREADS} threads and depth bound <= {EXHAUSTIVE_MAX_DEPTH}"
            )

    @property
    def threads(self) -> int:
        return len(self.sockets)


class Event(NamedTuple):
    step: int
    thread: int
    event: str
    socket: int
    info: Optional[dict] = None


@dataclass
class SimTrace:
    events: List[Event] = field(default_factory=list)
    schedule: List[int] = field(default_factory=list)
    sockets: Tuple[int, ...] = ()
    complete: bool = False
    counter: int = 0
    atomic_ops: Optional[dict] = None

    def of(self, kind: str) -> List[Event]:
        return [e for e in self.events if e.event == kind]

    @property
    def public_events(self) -> List[Event]:
        return [e for e in self.events if e.event in PUBLIC_EVENTS]

    @property
    def grant_order(self) -> List[int]:
        return [e.thread for e in self.events if e.event == "grant"]

    @property
    def handovers(self) -> List[Tuple[int, int]]:
        """(previous holder, new holder) for every release that passed the lock on."""
        return [
            (e.thread, e.info["to"])
            for e in self.events
            if e.event == "decide" and e.info.get("to") is not None
        ]

    @property
    def draws(self) -> List[int]:
        return [e.info["value"] for e in self.events if e.event == "draw"]

    def to_jsonl(self, public_only: bool = False) -> str:
        lines = []
        for e in self.public_events if public_only else self.events:
            rec = {"step": e.step, "thread": e.thread, "event": e.event, "socket": e.socket}
            if e.info:
                rec.update({k: v for k, v in e.info.items() if k not in rec})
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def parse_schedule(text: str) -> List[int]:
    return [int(tok) for tok in text.split()]


def format_schedule(schedule: Sequence[int]) -> str:
    return " ".join(str(t) for t in schedule) + "\n"


def _build_lock(config: SimConfig, topology: TopologyProvider):
    kind = config.lock
    if kind in ("cna", "cna-opt"):
        policy = config.policy
        if kind == "cna-opt" and not policy.shuffle_reduction_enabled:
            policy = replace(policy, shuffle_reduction_enabled=True)
        return CnaLock(
            policy=policy, topology=topology, registry=NodeRegistry(), draws=config.draws, counter=AtomicOpCounter()
        )
    if kind == "mcs":
        return McsLock(registry=NodeRegistry())
    if kind == "tas":
        lock = TasLock()
        lock.pause = lambda: None
        return lock
    if kind == "ticket":
        return TicketLock()
    if kind in ("word-mcs", "word-cna"):
        return WordLock(
            kind.split("-")[1],
            pools=PoolRegistry(config.policy.prng_seed),
            policy=config.policy,
            topology=topology,
            draws=config.draws,
        )
    raise ValueError(f"unknown lock kind {kind!r}")


class Simulation:
    """One execution of ``config``, advanced one step at a time."""

    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.topology = TopologyProvider("mock", dict(enumerate(config.sockets)))
        self.lock = _build_lock(config, self.topology)
        self.trace = SimTrace(sockets=config.sockets)
        self.step_no = 0
        self._current = -1
        self.counter = 0
        self.occupant: Optional[int] = None
        self.in_cs = [False] * config.threads
        self._owner_of: Dict[int, int] = {}
        self._unlinked: set = set()
        self._enqueued: set = set()
        self._queue_lock = config.lock in ("cna", "cna-opt", "mcs")
        if hasattr(self.lock, "observer"):
            self.lock.observer = self._on_lock_event
        self.contexts = [self.lock.new_context(i) for i in range(config.threads)]
        for ctx in self.contexts:
            if ctx is not None and hasattr(ctx, "handle"):
                self._owner_of[ctx.handle] = ctx.owner
        self._gens = [self._program(i) for i in range(config.threads)]
        self._wait: List[Optional[Callable[[], bool]]] = [None] * config.threads
        self._done = [False] * config.threads
        # run local prologues; none of them touches shared state
        self._current = -1
        for i, gen in enumerate(self._gens):
            self._current = i
            self._advance(i, first=True)
        self._current = -1

    # -- thread program --------------------------------------------------------

    def _program(self, i: int):
        lock = self.lock
        ctx = self.contexts[i]
        for _ in range(self.config.acquisitions[i]):
            if not self._queue_lock and not isinstance(lock, WordLock):
                yield
                self._record("enqueue", i)
                yield from lock.acquire_steps(ctx)
            else:
                yield from lock.acquire_steps(ctx)
            self._record("grant", i)
            if self.occupant is not None:
                raise MutualExclusionError(
                    f"thread {i} granted while thread {self.occupant} is in its critical section "
                    f"(step {self.step_no})"
                )
            self.occupant = i
            self.in_cs[i] = True
            seen = self.counter
            yield
            self.counter = seen + 1
            self.occupant = None
            self.in_cs[i] = False
            self._record("release", i)
            yield from lock.release_steps(ctx)

    def _record(self, kind: str, thread: int, **info) -> None:
        if kind == "enqueue":
            self._enqueued.add(thread)
        elif kind == "grant":
            self._enqueued.discard(thread)
        self.trace.events.append(Event(self.step_no, thread, kind, self.config.sockets[thread], info or None))

    def _on_lock_event(self, kind: str, node, **info) -> None:
        thread = self._current
        if kind in ("fast_path", "pending_path"):
            # word lock claimed without queueing; the queue path reports its own enqueue
            self._record("enqueue", thread, path=kind)
            return
        if kind in ("release", "slow_path", "grant_store"):
            if kind == "grant_store" and node is not None:
                self._record("grant_store", thread, to=node.owner, value=info["value"])
            return
        if kind == "enqueue":
            pred = info["pred"]
            if pred:
                self._unlinked.add(thread)
            self._record("enqueue", thread, pred=self._thread_of(pred))
        elif kind == "link":
            self._unlinked.discard(thread)
            self._record("link", thread, pred=self._thread_of(info["pred"]))
        elif kind == "draw":
            value = info["value"]
            self._record("draw", thread, value=value)
            if info["purpose"] == "keep_local" and not value & self.lock_policy.threshold:
                self._record("flush_draw", thread, value=value)
        elif kind == "decide":
            target = info.get("target")
            self._record("decide", thread, action=info["action"], to=None if target is None else target.owner)
        elif kind == "move_to_secondary":
            socket = self.config.sockets[node.owner]
            if len(set(self.config.sockets)) == 2 and socket == info["holder_socket"]:
                raise InvariantError(f"thread {node.owner} moved to secondary by a holder on its own socket")
            self._record("move_to_secondary", node.owner, holder_socket=info["holder_socket"])
        elif kind == "splice_secondary":
            before = info.get("before")
            self._record("splice_secondary", thread, head=node.owner, before=None if before is None else before.owner)

    @property
    def lock_policy(self) -> FairnessPolicy:
        lock = self.lock
        return lock._queue.policy if isinstance(lock, WordLock) else lock.policy

    def _thread_of(self, handle: int) -> Optional[int]:
        if not handle:
            return None
        node = self.lock.pools[handle] if isinstance(self.lock, WordLock) else self.lock.registry[handle]
        return node.owner

    # -- stepping ----------------------------------------------------------------

    def _advance(self, i: int, first: bool = False) -> None:
        try:
            self._wait[i] = next(self._gens[i]) if first else self._gens[i].send(None)
        except StopIteration:
            self._done[i] = True
            self._wait[i] = None

    def enabled(self) -> List[int]:
        out = []
        for i in range(self.config.threads):
            if self._done[i]:
                continue
            w = self._wait[i]
            if w is None or w():
                out.append(i)
        return out

    @property
    def finished(self) -> bool:
        return all(self._done)

    def step(self, i: int) -> None:
        if self._done[i]:
            raise ScheduleError(f"thread {i} has already finished (step {self.step_no})")
        w = self._wait[i]
        if w is not None and not w():
            raise ScheduleError(f"thread {i} is blocked at step {self.step_no}")
        self._current = i
        self.trace.schedule.append(i)
        self._advance(i)
        self._current = -1
        if self.config.check_invariants and self._queue_lock:
            self._check_queues()
        self.step_no += 1
        if self.finished:
            self.trace.complete = True
            self.trace.counter = self.counter
            ops = getattr(self.lock, "counter", None)
            if ops is not None:
                self.trace.atomic_ops = ops.as_dict()
            total = sum(self.config.acquisitions)
            if self.counter != total:
                raise MutualExclusionError(f"lost increments: counter {self.counter} != {total}")

    def run_until(self, thread: int, event: str, limit: int = 10_000) -> None:
        """Step ``thread`` alone until it records ``event``.

        Handy for scripting scenarios; the resulting ``trace.schedule`` can be
        replayed with :func:`run_schedule`.
        """
        start = len(self.trace.events)
        for _ in range(limit):
            if any(e.thread == thread and e.event == event for e in self.trace.events[start:]):
                return
            if thread not in self.enabled():
                raise ScheduleError(f"thread {thread} blocked before reaching {event!r}")
            self.step(thread)
        raise ScheduleError(f"thread {thread} did not reach {event!r} within {limit} steps")

    def _check_queues(self) -> None:
        """Queue-partition invariant, checked whenever the queue is settled."""
        if self._unlinked:
            return
        holder = self.occupant
        if holder is None:
            return
        lock = self.lock
        me = self.contexts[holder]
        main: List[int] = []
        node = me.next
        last = me
        while node is not None:
            main.append(node.owner)
            last = node
            node = node.next
        secondary: List[int] = []
        if isinstance(lock, CnaLock) and me.spin > 1:
            head = lock.registry[me.spin]
            node = head
            while node is not None:
                secondary.append(node.owner)
                if node is head.sec_tail:
                    if node.next is not None:
                        raise InvariantError("secondary tail has a successor")
                    break
                node = node.next
            else:
                raise InvariantError("secondary head's sec_tail is not on its chain")
        waiting = self._enqueued
        if set(main) & set(secondary):
            raise InvariantError(f"threads in both queues: {set(main) & set(secondary)}")
        if set(main) | set(secondary) != waiting or len(main) + len(secondary) != len(waiting):
            raise InvariantError(f"queues {main} + {secondary} do not partition waiters {sorted(waiting)}")
        tail = lock._tail.load()
        if tail != last.handle:
            raise InvariantError(f"lock tail does not match the last main-queue node (step {self.step_no})")

# -- schedule drivers ------------------------------------------------------------


def run_schedule(config: SimConfig, schedule: Sequence[int]) -> SimTrace:
    """Execute exactly ``schedule`` (a sequence of thread indices)."""
    sim = Simulation(config)
    for i in schedule:
        if sim.finished:
            raise ScheduleError("schedule continues after every thread finished")
        if not sim.enabled():
            raise DeadlockError(f"no thread can move at step {sim.step_no}")
        sim.step(i)
    if not sim.finished and not sim.enabled():
        raise DeadlockError(f"no thread can move at step {sim.step_no}")
    return sim.trace


def run_random(config: SimConfig, seed: Optional[int] = None, max_steps: int = 10_000_000) -> SimTrace:
    """Run to completion choosing uniformly among enabled threads."""
    rng = random.Random(config.seed if seed is None else seed)
    sim = Simulation(config)
    while not sim.finished:
        choices = sim.enabled()
        if not choices:
            raise DeadlockError(f"no thread can move at step {sim.step_no}")
        if sim.step_no >= max_steps:
            raise BoundExceededError(f"run exceeded {max_steps} steps")
        sim.step(choices[rng.randrange(len(choices))] if len(choices) > 1 else choices[0])
    return sim.trace


def enumerate_schedules(config: SimConfig) -> Iterator[SimTrace]:
    """Yield the trace of every complete interleaving, depth-first.

    Each schedule is replayed from scratch; at every branch point the
    unexplored alternatives are remembered and revisited on backtrack.
    """
    if config.mode != "exhaustive":
        config = replace(config, mode="exhaustive")
    prefix: List[int] = []
    # options[d] = enabled threads at depth d not yet explored
    options: List[List[int]] = []
    while True:
        sim = Simulation(config)
        for i in prefix:
            sim.step(i)
        while not sim.finished:
            choices = sim.enabled()
            if not choices:
                raise DeadlockError(f"deadlock after schedule {sim.trace.schedule}")
            if sim.step_no >= config.depth_bound:
                raise BoundExceededError(f"schedule {sim.trace.schedule} exceeds depth bound {config.depth_bound}")
            options.append(choices[1:])
            prefix.append(choices[0])
            sim.step(choices[0])
        yield sim.trace
        while options and not options[-1]:
            options.pop()
            prefix.pop()
        if not options:
            return
        prefix[-1] = options[-1].pop(0)


# -- oracle ----------------------------------------------------------------------


class TwoQueueModel:
    """Sequential reference model of the CNA handover discipline.

    Queues hold thread ids; ``fifo=True`` turns it into MCS.
    """

    def __init__(
        self,
        sockets: Mapping[int, int],
        policy: FairnessPolicy = FairnessPolicy(),
        draw: Optional[Callable[[int], int]] = None,
        fifo: bool = False,
    ) -> None:
        self.sockets = sockets
        self.policy = policy
        self.draw = draw or (lambda thread: 1)
        self.fifo = fifo
        self.holder: Optional[int] = None
        self.main: deque = deque()
        self.secondary: deque = deque()
        self.flush_draws = 0

    def arrive(self, thread: int) -> Optional[int]:
        """Returns ``thread`` if it got the lock immediately."""
        if self.holder is None and not self.main and not self.secondary:
            self.holder = thread
            return thread
        self.main.append(thread)
        return None

    def release(self) -> Optional[int]:
        """Pass the lock on; returns the new holder (``None`` if it went idle)."""
        holder = self.holder
        main, secondary = self.main, self.secondary
        if not main:
            if secondary:
                new = secondary.popleft()
                self.main, self.secondary = secondary, deque()
                self.holder = new
                return new
            self.holder = None
            return None
        if self.fifo:
            self.holder = main.popleft()
            return self.holder
        policy = self.policy
        if policy.shuffle_reduction_enabled and not secondary and (self.draw(holder) & policy.shuffle_threshold):
            self.holder = main.popleft()
            return self.holder
        if not self.draw(holder) & policy.threshold:
            self.flush_draws += 1
        else:
            sockets = self.sockets
            my_socket = sockets[holder]
            if sockets[main[0]] == my_socket:
                self.holder = main.popleft()
                return self.holder
            for idx, t in enumerate(main):
                if sockets[t] == my_socket:
                    for _ in range(idx):
                        secondary.append(main.popleft())
                    self.holder = main.popleft()
                    return self.holder
        if secondary:
            new = secondary.popleft()
            secondary.extend(main)
            self.main, self.secondary = secondary, deque()
            self.holder = new
            return new
        self.holder = main.popleft()
        return self.holder


Arrival = Union[Tuple[int, int], Tuple[int, int, int]]


def _draw_source(draws) -> Callable[[int], int]:
    if draws is None:
        return lambda thread: 1
    if callable(draws):
        return draws
    it = cycle(list(draws))
    return lambda thread: next(it)


def oracle_grant_order(
    arrivals: Sequence[Arrival],
    draws=None,
    policy: FairnessPolicy = FairnessPolicy(),
    fifo: bool = False,
) -> List[int]:
    """Grant order predicted by the sequential two-queue model.

    ``arrivals`` are ``(thread, socket)`` or ``(thread, socket, after)``
    where ``after`` is the number of release decisions that precede the
    arrival (default 0: present from the start).  ``draws`` is a sequence
    consumed (cycled) per draw, a ``thread -> draw`` callable, or ``None``
    for "always keep the lock local".
    """
    if not arrivals:
        raise ValueError("arrivals must be non-empty")
    norm = sorted(
        ((a[2] if len(a) > 2 else 0), n, a[0], a[1]) for n, a in enumerate(arrivals)
    )
    sockets: Dict[int, int] = {}
    for _, _, t, s in norm:
        if sockets.setdefault(t, s) != s:
            raise ValueError(f"thread {t} listed on two sockets")
    model = TwoQueueModel(sockets, policy, _draw_source(draws), fifo)
    grants: List[int] = []
    pos = 0
    released = 0

    def admit(upto: int) -> None:
        nonlocal pos
        while pos < len(norm) and norm[pos][0] <= upto:
            if model.arrive(norm[pos][2]) is not None:
                grants.append(norm[pos][2])
            pos += 1

    admit(0)
    while True:
        if model.holder is None:
            if pos >= len(norm):
                break
            released = max(released, norm[pos][0])
            admit(released)
            continue
        new = model.release()
        released += 1
        if new is not None:
            grants.append(new)
        admit(released)
    return grants


def arrival_timeline(trace: SimTrace) -> List[Tuple[int, int, int]]:
    """Serialize a queue-lock trace into oracle arrivals.

    An arrival counts from the step at which its node became reachable from
    the queue head: its own link store or its predecessor's becoming
    reachable, whichever is later.  ``after`` is the number of release
    decisions made at earlier steps.  Ties keep tail-exchange order.
    """
    sockets = trace.sockets
    threads: List[int] = []
    preds: List[Optional[int]] = []
    own: List[Optional[int]] = []
    current: Dict[int, int] = {}
    decisions: List[int] = []
    for e in trace.events:
        if e.event == "enqueue":
            pred = (e.info or {}).get("pred")
            ep = len(threads)
            threads.append(e.thread)
            preds.append(None if pred is None else current[pred])
            own.append(e.step if pred is None else None)
            current[e.thread] = ep
        elif e.event == "link":
            own[current[e.thread]] = e.step
        elif e.event == "decide":
            decisions.append(e.step)
    visible: List[int] = []
    for ep in range(len(threads)):
        if own[ep] is None:
            raise SimError(f"thread {threads[ep]} never linked into the queue")
        step = own[ep]
        if preds[ep] is not None:
            step = max(step, visible[preds[ep]])
        visible.append(step)
    order = sorted(range(len(threads)), key=lambda ep: (visible[ep], ep))
    return [
        (threads[ep], sockets[threads[ep]], sum(1 for d in decisions if d < visible[ep]))
        for ep in order
    ]


# -- metrics -----------------------------------------------------------------------


def fairness_factor(per_thread_counts: Sequence[int]) -> float:
    """Share of all operations done by the busier half of the threads.

    0.5 is perfectly fair, 1.0 is total starvation.  For an odd number of
    threads the busier half is the top ``ceil(n / 2)``.
    """
    counts = sorted(per_thread_counts, reverse=True)
    if len(counts) < 2:
        raise ValueError("fairness factor needs at least two threads")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise ValueError("fairness factor is undefined when every count is zero")
    top = (len(counts) + 1) // 2
    return sum(counts[:top]) / total


def intra_socket_handover_ratio(
    handovers: Union[SimTrace, Sequence[Tuple[int, int]]],
    sockets: Optional[Mapping[int, int]] = None,
) -> float:
    """Fraction of handovers whose new holder shares the old holder's socket."""
    if isinstance(handovers, SimTrace):
        sockets = dict(enumerate(handovers.sockets)) if sockets is None else sockets
        pairs = handovers.handovers
    else:
        pairs = list(handovers)
    if sockets is None:
        raise ValueError("a socket map is required for bare handover pairs")
    if not pairs:
        raise ValueError("no handovers to measure")
    local = sum(1 for a, b in pairs if sockets[a] == sockets[b])
    return local / len(pairs)


def consecutive_pairs(grant_order: Sequence[int]) -> List[Tuple[int, int]]:
    return list(zip(grant_order, grant_order[1:]))


# -- saturated contention on the sequential model -----------------------------------


@dataclass
class ContentionResult:
    counts: List[int]
    handovers: int
    local_handovers: int
    flushes: int

    @property
    def fairness(self) -> float:
        return fairness_factor(self.counts)

    @property
    def locality(self) -> float:
        return self.local_handovers / self.handovers


def saturated_contention(
    sockets: Sequence[int],
    handovers: int,
    lock: str = "cna",
    policy: FairnessPolicy = FairnessPolicy(),
    seed: int = 0,
) -> ContentionResult:
    """Equal-demand threads that re-arrive right after every release.

    Runs the two-queue model handover by handover; each releasing thread
    draws from its own xorshift generator seeded with ``seed ^ thread``,
    exactly like the lock's per-thread generators.  Initial arrival order is
    a seeded shuffle.
    """
    if lock not in ("cna", "cna-opt", "mcs"):
        raise ValueError(f"saturated model supports cna, cna-opt and mcs, not {lock!r}")
    if lock == "cna-opt" and not policy.shuffle_reduction_enabled:
        policy = replace(policy, shuffle_reduction_enabled=True)
    n = len(sockets)
    rngs = [XorShift32(seed ^ t) for t in range(n)]
    model = TwoQueueModel(dict(enumerate(sockets)), policy, lambda t: rngs[t].next(), fifo=(lock == "mcs"))
    order = list(range(n))
    random.Random(seed).shuffle(order)
    for t in order:
        model.arrive(t)
    counts = [0] * n
    counts[model.holder] += 1
    local = 0
    release, arrive = model.release, model.arrive
    for _ in range(handovers):
        prev = model.holder
        new = release()
        arrive(prev)
        counts[new] += 1
        if sockets[new] == sockets[prev]:
            local += 1
    return ContentionResult(counts, handovers, local, model.flush_draws)
