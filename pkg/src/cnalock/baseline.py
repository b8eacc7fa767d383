"""Baseline locks: MCS, test-and-set with exponential backoff, ticket."""

from __future__ import annotations

import ctypes
from typing import Optional

from .atomics import AtomicWord, Steps, cpu_relax
from .base import DEFAULT_REGISTRY, Lock, NodeRegistry
from .topology import current_thread_id


class McsNode:
    __slots__ = ("locked", "next", "handle", "owner")

    def __init__(self, owner: int = 0) -> None:
        self.locked = 0
        self.next: Optional[McsNode] = None
        self.handle = 0
        self.owner = owner

    def __repr__(self) -> str:
        return f"McsNode(owner={self.owner}, handle={self.handle}, locked={self.locked})"


class McsLock(Lock):
    """Mellor-Crummey and Scott queue lock; FIFO by tail-exchange order."""

    kind = "mcs"

    def __init__(self, registry: Optional[NodeRegistry] = None) -> None:
        super().__init__()
        self._tail = AtomicWord(0, ctypes.c_size_t)
        self.registry = DEFAULT_REGISTRY if registry is None else registry
        self.observer = None

    @property
    def shared_state_bytes(self) -> int:
        return self._tail.nbytes

    def new_context(self, owner: Optional[int] = None) -> McsNode:
        node = McsNode(current_thread_id() if owner is None else owner)
        node.handle = self.registry.register(node)
        return node

    def _emit(self, event: str, node, **info) -> None:
        if self.observer is not None:
            self.observer(event, node, **info)

    def acquire_steps(self, me: McsNode) -> Steps:
        me.next = None
        me.locked = 1
        yield
        pred_handle = self._tail.swap(me.handle)
        self._emit("enqueue", me, pred=pred_handle)
        if not pred_handle:
            me.locked = 0
            return
        pred = self.registry[pred_handle]
        yield
        pred.next = me
        self._emit("link", me, pred=pred_handle)
        yield lambda: me.locked == 0

    def release_steps(self, me: McsNode) -> Steps:
        self._emit("release", me)
        if me.next is None:
            yield
            if self._tail.cas(me.handle, 0) == me.handle:
                self._emit("decide", me, action="free")
                return
            yield lambda: me.next is not None
        succ = me.next
        self._emit("decide", me, action="next", target=succ)
        yield
        succ.locked = 0
        self._emit("grant_store", succ, value=1)


class TasLock(Lock):
    """Test-and-set spin lock with bounded exponential backoff.

    After each failed test-and-set the caller relaxes for ``backoff``
    iterations, doubling up to ``max_backoff``.
    """

    kind = "tas"

    def __init__(self, min_backoff: int = 1, max_backoff: int = 4096) -> None:
        super().__init__()
        if not 1 <= min_backoff <= max_backoff:
            raise ValueError("need 1 <= min_backoff <= max_backoff")
        self._state = AtomicWord(0, ctypes.c_uint32)
        self.min_backoff = min_backoff
        self.max_backoff = max_backoff

    @property
    def state(self) -> int:
        return self._state.load()

    def acquire_steps(self, ctx=None) -> Steps:
        backoff = self.min_backoff
        while True:
            yield
            if self._state.swap(1) == 0:
                return
            relax = self.pause or cpu_relax
            for _ in range(backoff):
                relax()
            backoff = min(backoff * 2, self.max_backoff)

    def release_steps(self, ctx=None) -> Steps:
        yield
        self._state.store(0)


class TicketLock(Lock):
    kind = "ticket"

    def __init__(self) -> None:
        super().__init__()
        self._next_ticket = AtomicWord(0, ctypes.c_uint32)
        self._now_serving = AtomicWord(0, ctypes.c_uint32)

    @property
    def next_ticket(self) -> int:
        return self._next_ticket.load()

    @property
    def now_serving(self) -> int:
        return self._now_serving.load()

    def acquire_steps(self, ctx=None) -> Steps:
        yield
        ticket = self._next_ticket.fetch_add(1)
        serving = self._now_serving
        if serving.load() != ticket:
            yield lambda: serving.load() == ticket

    def release_steps(self, ctx=None) -> Steps:
        # only the holder writes now_serving, so load + store is enough
        yield
        self._now_serving.store(self._now_serving.load() + 1)
