"""Compact NUMA-aware (CNA) queue lock.

The lock word is a single handle to the tail of the main queue.  Waiters
that run on a socket other than the holder's are parked in a secondary
queue whose head handle travels in the grant word (``spin``) from holder to
holder, and whose tail is remembered in the head node's ``sec_tail``.
"""

from __future__ import annotations

import ctypes
import itertools
import os
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional

from .atomics import AtomicWord, Steps
from .base import DEFAULT_REGISTRY, Lock, NodeRegistry
from .topology import NOT_RECORDED, TopologyProvider, current_thread_id

if ctypes.sizeof(ctypes.c_size_t) != ctypes.sizeof(ctypes.c_void_p):
    raise ImportError("the tail word must be exactly one pointer wide")

MASK32 = 0xFFFFFFFF
_ZERO_SEED_STATE = 0x6C078965  # xorshift state must be non-zero


class XorShift32:
    """Marsaglia xorshift32 (13, 17, 5); period 2**32 - 1."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 1) -> None:
        self.state = (seed & MASK32) or _ZERO_SEED_STATE

    def next(self) -> int:
        x = self.state
        x ^= (x << 13) & MASK32
        x ^= x >> 17
        x ^= (x << 5) & MASK32
        self.state = x
        return x


def pseudo_rand(rng: XorShift32) -> int:
    return rng.next()


def _is_mask(value: int) -> bool:
    return value >= 0 and (value & (value + 1)) == 0


@dataclass(frozen=True)
class FairnessPolicy:
    """Knobs of the handover policy.

    ``threshold`` controls long-term fairness: the secondary queue is
    flushed when ``draw & threshold == 0``.  ``shuffle_threshold`` is used
    only when shuffle reduction is on.
    """

    threshold: int = 0xFFFF
    shuffle_threshold: int = 0xFF
    shuffle_reduction_enabled: bool = False
    prng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("threshold", "shuffle_threshold"):
            if not _is_mask(getattr(self, name)):
                raise ValueError(f"{name} must be of the form 2**k - 1, got {getattr(self, name):#x}")

    def thread_rng(self, thread_index: int) -> XorShift32:
        return XorShift32(self.prng_seed ^ thread_index)

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None, **overrides) -> "FairnessPolicy":
        env = os.environ if environ is None else environ
        kw = {}
        if "CNA_THRESHOLD" in env:
            kw["threshold"] = int(env["CNA_THRESHOLD"], 0)
        if "CNA_SHUFFLE_THRESHOLD" in env:
            kw["shuffle_threshold"] = int(env["CNA_SHUFFLE_THRESHOLD"], 0)
        if "CNA_SEED" in env:
            kw["prng_seed"] = int(env["CNA_SEED"], 0)
        kw.update(overrides)
        return cls(**kw)


def keep_lock_local(policy: FairnessPolicy, draw: int) -> bool:
    return (draw & policy.threshold) != 0


class AtomicOpCounter:
    """Audit of shared-memory operations issued by a lock.

    Each acquire/release tallies locally and commits once, so the per-call
    maxima below are exact.
    """

    def __init__(self) -> None:
        self._mutex = threading.Lock()
        self.acquires = 0
        self.releases = 0
        self.swaps = 0
        self.cas_attempts = 0
        self.plain_grant_stores = 0
        self.min_swaps_per_acquire: Optional[int] = None
        self.max_swaps_per_acquire = 0
        self.max_cas_per_release = 0
        self.handovers = 0
        self.handovers_empty_secondary = 0
        self.find_successor_calls = 0
        self.find_successor_calls_empty_secondary = 0

    def record_acquire(self, swaps: int) -> None:
        with self._mutex:
            self.acquires += 1
            self.swaps += swaps
            self.max_swaps_per_acquire = max(self.max_swaps_per_acquire, swaps)
            if self.min_swaps_per_acquire is None or swaps < self.min_swaps_per_acquire:
                self.min_swaps_per_acquire = swaps

    def record_release(self, cas: int, grants: int, handover: bool, empty_secondary: bool, searched: bool) -> None:
        with self._mutex:
            self.releases += 1
            self.cas_attempts += cas
            self.plain_grant_stores += grants
            self.max_cas_per_release = max(self.max_cas_per_release, cas)
            if handover:
                self.handovers += 1
                if empty_secondary:
                    self.handovers_empty_secondary += 1
            if searched:
                self.find_successor_calls += 1
                if empty_secondary:
                    self.find_successor_calls_empty_secondary += 1

    def as_dict(self) -> dict:
        return {k: v for k, v in vars(self).items() if not k.startswith("_")}


class CnaNode:
    """Per-acquisition queue record.

    ``spin`` is 0 while waiting, 1 when granted with an empty secondary
    queue, or the handle of the secondary-queue head.
    """

    __slots__ = ("spin", "socket", "sec_tail", "next", "handle", "owner", "rng")

    def __init__(self, owner: int = 0, rng: Optional[XorShift32] = None) -> None:
        self.spin = 0
        self.socket = NOT_RECORDED
        self.sec_tail: Optional[CnaNode] = None
        self.next: Optional[CnaNode] = None
        self.handle = 0
        self.owner = owner
        self.rng = rng or XorShift32(owner)

    def __repr__(self) -> str:
        return f"CnaNode(owner={self.owner}, handle={self.handle}, spin={self.spin}, socket={self.socket})"


class CnaLock(Lock):
    """The CNA lock; shared state is one pointer-sized word.

    ``draws`` optionally replaces the per-thread generators with a fixed
    sequence of draws (cycled), consumed in release order.  ``observer``,
    when set, is called as ``observer(event, node, **info)`` at protocol
    events; the simulator uses it to build traces.
    """

    kind = "cna"

    def __init__(
        self,
        policy: Optional[FairnessPolicy] = None,
        topology: Optional[TopologyProvider] = None,
        registry: Optional[NodeRegistry] = None,
        draws: Optional[Iterable[int]] = None,
        counter: Optional[AtomicOpCounter] = None,
    ) -> None:
        super().__init__()
        self._tail = AtomicWord(0, ctypes.c_size_t)
        self.policy = policy or FairnessPolicy()
        self.topology = topology or TopologyProvider("mock")
        self.registry = DEFAULT_REGISTRY if registry is None else registry
        self.counter = counter
        self.observer = None
        self._draws: Optional[Iterator[int]] = itertools.cycle(list(draws)) if draws is not None else None
        if self.policy.shuffle_reduction_enabled:
            self.kind = "cna-opt"

    @property
    def shared_state_bytes(self) -> int:
        return self._tail.nbytes

    @property
    def tail(self) -> Optional[CnaNode]:
        handle = self._tail.load()
        return self.registry[handle] if handle else None

    def new_context(self, owner: Optional[int] = None) -> CnaNode:
        owner = current_thread_id() if owner is None else owner
        node = CnaNode(owner, self.policy.thread_rng(owner))
        node.handle = self.registry.register(node)
        return node

    new_node = new_context

    # -- tail-word primitives; the word lock overrides these ---------------

    def _swap_tail(self, me: CnaNode) -> int:
        return self._tail.swap(me.handle)

    def _close_tail(self, me: CnaNode, new_tail: int) -> bool:
        return self._tail.cas(me.handle, new_tail) == me.handle

    # -- policy -------------------------------------------------------------

    def _draw(self, me: CnaNode, purpose: str) -> int:
        value = next(self._draws) if self._draws is not None else me.rng.next()
        if self.observer is not None:
            self.observer("draw", me, value=value, purpose=purpose)
        return value

    def _emit(self, event: str, node, **info) -> None:
        if self.observer is not None:
            self.observer(event, node, **info)

    # -- acquire --------------------------------------------------------------

    def acquire_steps(self, me: CnaNode) -> Steps:
        me.next = None
        me.socket = NOT_RECORDED
        me.spin = 0
        yield
        pred_handle = self._swap_tail(me)
        if self.counter is not None:
            self.counter.record_acquire(1)
        self._emit("enqueue", me, pred=pred_handle)
        if not pred_handle:
            me.spin = 1
            return
        me.socket = self.topology.current_numa_node(me.owner)
        pred = self.registry[pred_handle]
        yield
        pred.next = me
        self._emit("link", me, pred=pred_handle)
        yield lambda: me.spin != 0

    # -- release --------------------------------------------------------------

    def release_steps(self, me: CnaNode) -> Steps:
        stats = _ReleaseStats()
        self._emit("release", me)
        if me.next is None:
            if me.spin == 1:
                yield
                stats.cas += 1
                if self._close_tail(me, 0):
                    self._emit("decide", me, action="free")
                    self._commit(stats)
                    return
            else:
                sec_head = self.registry[me.spin]
                yield
                stats.cas += 1
                if self._close_tail(me, sec_head.sec_tail.handle):
                    self._emit("decide", me, action="secondary", target=sec_head)
                    yield
                    sec_head.spin = 1
                    stats.grants += 1
                    self._emit("grant_store", sec_head, value=1)
                    self._commit(stats)
                    return
            yield lambda: me.next is not None
        yield from self._pass_lock(me, stats)
        self._commit(stats)

    def _pass_lock(self, me: CnaNode, stats: "_ReleaseStats") -> Steps:
        """Hand the lock to a waiter; ``me.next`` is known to be present."""
        stats.handover = True
        stats.empty_secondary = me.spin == 1
        policy = self.policy
        if policy.shuffle_reduction_enabled and me.spin == 1 and (self._draw(me, "shuffle") & policy.shuffle_threshold):
            succ = me.next
            self._emit("decide", me, action="shuffle-skip", target=succ)
            yield
            succ.spin = 1
            self._grant(succ, 1, stats)
            return
        succ = None
        if keep_lock_local(policy, self._draw(me, "keep_local")):
            stats.searched = True
            succ = self._find_successor(me)
        if succ is not None:
            value = me.spin
            self._emit("decide", me, action="local", target=succ)
            yield
            succ.spin = value
            self._grant(succ, value, stats)
        elif me.spin > 1:
            succ = self.registry[me.spin]
            succ.sec_tail.next = me.next
            self._emit("splice_secondary", succ, before=me.next)
            self._emit("decide", me, action="splice", target=succ)
            yield
            succ.spin = 1
            self._grant(succ, 1, stats)
        else:
            succ = me.next
            self._emit("decide", me, action="next", target=succ)
            yield
            succ.spin = 1
            self._grant(succ, 1, stats)

    def _grant(self, succ: CnaNode, value: int, stats: "_ReleaseStats") -> None:
        stats.grants += 1
        self._emit("grant_store", succ, value=value)

    def _find_successor(self, me: CnaNode) -> Optional[CnaNode]:
        nxt = me.next
        my_socket = me.socket
        if my_socket == NOT_RECORDED:
            my_socket = self.topology.current_numa_node(me.owner)
        if nxt.socket == my_socket:
            return nxt
        sec_head = nxt
        sec_tail = nxt
        cur = nxt.next
        while cur is not None:
            if cur.socket == my_socket:
                if me.spin > 1:
                    self.registry[me.spin].sec_tail.next = sec_head
                else:
                    me.spin = sec_head.handle
                sec_tail.next = None
                self.registry[me.spin].sec_tail = sec_tail
                if self.observer is not None:
                    node = sec_head
                    while node is not None:
                        self.observer("move_to_secondary", node, holder_socket=my_socket)
                        node = node.next
                return cur
            sec_tail = cur
            cur = cur.next
        return None

    def _commit(self, stats: "_ReleaseStats") -> None:
        if self.counter is not None:
            self.counter.record_release(stats.cas, stats.grants, stats.handover, stats.empty_secondary, stats.searched)

    def find_successor(self, me: CnaNode) -> Optional[CnaNode]:
        """Search the main queue for a waiter on the holder's socket.

        Skipped waiters move to the secondary queue only when one is found.
        The caller must hold the lock and ``me.next`` must be present.
        """
        return self._find_successor(me)


class _ReleaseStats:
    __slots__ = ("cas", "grants", "handover", "empty_secondary", "searched")

    def __init__(self) -> None:
        self.cas = 0
        self.grants = 0
        self.handover = False
        self.empty_secondary = False
        self.searched = False
