"""qspinlock-style lock in a single 32-bit word.

Layout::

    bits  0-7   locked byte
    bit   8     pending
    bits  9-15  reserved (zero)
    bits 16-31  tail code = ((cpu + 1) << 2) | ctx, 0 when the queue is empty

Acquisition tries a compare-and-swap 0 -> locked, then the pending bit, then
falls back to a queue built from per-thread pools of four nodes.  The queue
discipline is MCS or CNA; in both, a grant only makes the waiter the queue
head, which then waits for the locked byte and the pending bit to clear.
Release is a plain store of 0 into the locked byte.
"""

from __future__ import annotations

import ctypes
import threading
from typing import Dict, List, Optional

from .atomics import AtomicWord, Steps
from .base import Lock
from .cna import CnaLock, CnaNode, FairnessPolicy, _ReleaseStats
from .topology import TopologyProvider, current_thread_id

LOCKED = 1
LOCKED_MASK = 0xFF
PENDING = 1 << 8
LOCKED_PENDING_MASK = LOCKED_MASK | PENDING
TAIL_SHIFT = 16
TAIL_MASK = 0xFFFF << TAIL_SHIFT
CTX_BITS = 2
MAX_NESTING = 1 << CTX_BITS
MAX_CPUS = (1 << (16 - CTX_BITS)) - 1  # cpu + 1 must fit in 14 bits


class NestingLimitError(RuntimeError):
    """A thread tried to hold more word locks than it has queue nodes."""


def encode_tail(cpu: int, ctx: int) -> int:
    if not 0 <= cpu < MAX_CPUS:
        raise ValueError(f"cpu {cpu} out of range [0, {MAX_CPUS})")
    if not 0 <= ctx < MAX_NESTING:
        raise ValueError(f"ctx {ctx} out of range [0, {MAX_NESTING})")
    return ((cpu + 1) << CTX_BITS) | ctx


def decode_tail(code: int) -> tuple[int, int]:
    if not 0 < code <= 0xFFFF or code >> CTX_BITS == 0:
        raise ValueError(f"invalid tail code {code:#x}")
    return (code >> CTX_BITS) - 1, code & (MAX_NESTING - 1)


class LockWord32:
    """The 4-byte lock word with field accessors."""

    __slots__ = ("_word",)

    def __init__(self) -> None:
        self._word = AtomicWord(0, ctypes.c_uint32)

    @property
    def nbytes(self) -> int:
        return self._word.nbytes

    @property
    def value(self) -> int:
        return self._word.load()

    @property
    def locked(self) -> int:
        return self._word.load() & LOCKED_MASK

    @property
    def pending(self) -> bool:
        return bool(self._word.load() & PENDING)

    @property
    def tail_code(self) -> int:
        return self._word.load() >> TAIL_SHIFT

    def xchg_tail(self, code: int) -> int:
        """Atomically replace the tail code; returns the previous one."""
        word = self._word
        while True:
            old = word.load()
            if word.cas(old, (old & ~TAIL_MASK & 0xFFFFFFFF) | (code << TAIL_SHIFT)) == old:
                return old >> TAIL_SHIFT

    def __repr__(self) -> str:
        v = self.value
        return f"LockWord32(locked={v & LOCKED_MASK}, pending={int(bool(v & PENDING))}, tail={v >> TAIL_SHIFT:#x})"


class NodePool:
    """Four statically allocated queue nodes for one thread (or CPU)."""

    __slots__ = ("cpu", "owner", "nodes", "depth")

    def __init__(self, cpu: int, owner: int, rng_seed: int = 0) -> None:
        self.cpu = cpu
        self.owner = owner
        self.depth = 0
        self.nodes: List[CnaNode] = []
        rng = FairnessPolicy(prng_seed=rng_seed).thread_rng(owner)
        for ctx in range(MAX_NESTING):
            node = CnaNode(owner, rng)
            node.handle = encode_tail(cpu, ctx)
            self.nodes.append(node)

    def __repr__(self) -> str:
        return f"NodePool(cpu={self.cpu}, depth={self.depth})"


class PoolRegistry:
    """cpu index -> NodePool; resolves tail codes back to nodes."""

    def __init__(self, rng_seed: int = 0) -> None:
        self._pools: List[NodePool] = []
        self._by_owner: Dict[int, NodePool] = {}
        self._mutex = threading.Lock()
        self._local = threading.local()
        self.rng_seed = rng_seed

    def pool_for(self, owner: int) -> NodePool:
        with self._mutex:
            pool = self._by_owner.get(owner)
            if pool is None:
                pool = NodePool(len(self._pools), owner, self.rng_seed)
                self._pools.append(pool)
                self._by_owner[owner] = pool
            return pool

    def current(self) -> NodePool:
        try:
            return self._local.pool
        except AttributeError:
            pool = self._local.pool = self.pool_for(current_thread_id())
            return pool

    def __getitem__(self, code: int) -> CnaNode:
        cpu, ctx = decode_tail(code)
        return self._pools[cpu].nodes[ctx]


DEFAULT_POOLS = PoolRegistry()


class _WordCnaQueue(CnaLock):
    """CNA queue discipline whose tail lives in the upper half of a LockWord32."""

    def __init__(self, word: LockWord32, **kw) -> None:
        super().__init__(**kw)
        self._word = word

    def _swap_tail(self, me: CnaNode) -> int:
        return self._word.xchg_tail(me.handle)

    def _close_tail(self, me: CnaNode, new_tail: int) -> bool:
        # also claims the lock: locked byte set in the same CAS
        expected = me.handle << TAIL_SHIFT
        return self._word._word.cas(expected, (new_tail << TAIL_SHIFT) | LOCKED) == expected


class WordLock(Lock):
    """Four-byte lock with a test-and-set fast path and an MCS or CNA slow path."""

    def __init__(
        self,
        slow_path: str = "mcs",
        pools: Optional[PoolRegistry] = None,
        policy: Optional[FairnessPolicy] = None,
        topology: Optional[TopologyProvider] = None,
        draws=None,
    ) -> None:
        super().__init__()
        if slow_path not in ("mcs", "cna"):
            raise ValueError(f"slow_path must be 'mcs' or 'cna', got {slow_path!r}")
        self.slow_path = slow_path
        self.kind = f"word-{slow_path}"
        self.word = LockWord32()
        self.pools = DEFAULT_POOLS if pools is None else pools
        self.observer = None
        self._queue = _WordCnaQueue(self.word, policy=policy, topology=topology, registry=self.pools, draws=draws)

    @property
    def shared_state_bytes(self) -> int:
        return self.word.nbytes

    @property
    def observer(self):
        return self._observer

    @observer.setter
    def observer(self, fn) -> None:
        self._observer = fn
        if hasattr(self, "_queue"):
            self._queue.observer = fn

    def new_context(self, owner: Optional[int] = None) -> NodePool:
        return self.pools.pool_for(current_thread_id() if owner is None else owner)

    def _thread_ctx(self) -> NodePool:
        # the pool is per thread, not per lock: nesting spans all word locks
        return self.pools.current()

    def _emit(self, event: str, node, **info) -> None:
        if self._observer is not None:
            self._observer(event, node, **info)

    def acquire_steps(self, pool: NodePool) -> Steps:
        if pool.depth >= MAX_NESTING:
            raise NestingLimitError(f"thread already holds {pool.depth} word locks (limit {MAX_NESTING})")
        idx = pool.depth
        pool.depth += 1
        word = self.word._word
        yield
        val = word.cas(0, LOCKED)
        if val == 0:
            self._emit("fast_path", pool.nodes[idx])
            return
        if not val & ~LOCKED_MASK:
            yield
            val = word.fetch_or(PENDING)
            if not val & ~LOCKED_MASK:
                self._emit("pending_path", pool.nodes[idx])
                yield lambda: not word.load() & LOCKED_MASK
                yield
                # clear pending and set locked with one halfword store
                word.store_masked(0xFFFF, LOCKED)
                return
            if not val & PENDING:
                yield
                word.fetch_and(~PENDING & 0xFFFFFFFF)
        node = pool.nodes[idx]
        self._emit("slow_path", node)
        if self.slow_path == "mcs":
            yield from self._mcs_slow(node)
        else:
            yield from self._cna_slow(node)

    def _mcs_slow(self, node: CnaNode) -> Steps:
        node.next = None
        node.spin = 0
        word = self.word
        yield
        prev = word.xchg_tail(node.handle)
        self._emit("enqueue", node, pred=prev)
        if prev:
            pred = self.pools[prev]
            yield
            pred.next = node
            self._emit("link", node, pred=prev)
            yield lambda: node.spin != 0
        raw = word._word
        yield lambda: not raw.load() & LOCKED_PENDING_MASK
        expected = node.handle << TAIL_SHIFT
        if raw.load() == expected:
            yield
            if raw.cas(expected, LOCKED) == expected:
                return
        yield
        raw.store_masked(LOCKED_MASK, LOCKED)
        if node.next is None:
            yield lambda: node.next is not None
        succ = node.next
        yield
        succ.spin = 1
        self._emit("grant_store", succ, value=1)

    def _cna_slow(self, node: CnaNode) -> Steps:
        queue = self._queue
        yield from queue.acquire_steps(node)
        raw = self.word._word
        yield lambda: not raw.load() & LOCKED_PENDING_MASK
        stats = _ReleaseStats()
        if node.next is None:
            if node.spin == 1:
                yield
                stats.cas += 1
                if queue._close_tail(node, 0):
                    queue._commit(stats)
                    return
            else:
                sec_head = self.pools[node.spin]
                yield
                stats.cas += 1
                if queue._close_tail(node, sec_head.sec_tail.handle):
                    yield
                    sec_head.spin = 1
                    stats.grants += 1
                    self._emit("grant_store", sec_head, value=1)
                    queue._commit(stats)
                    return
        yield
        raw.store_masked(LOCKED_MASK, LOCKED)
        if node.next is None:
            yield lambda: node.next is not None
        yield from queue._pass_lock(node, stats)
        queue._commit(stats)

    def release_steps(self, pool: NodePool) -> Steps:
        self._emit("release", None)
        yield
        self.word._word.store_masked(LOCKED_MASK, 0)
        pool.depth -= 1
