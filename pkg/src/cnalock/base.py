"""Common lock interface and node-handle registry."""

from __future__ import annotations

import threading
from typing import Any, Callable, List, Optional

from .atomics import Steps, run_blocking
from .topology import current_thread_id

FIRST_HANDLE = 2  # handles 0 and 1 are reserved as grant-word sentinels


class NodeRegistry:
    """Maps integer node handles to queue nodes.

    Handles are ``index + 2`` so that a handle can share a word with the
    sentinel values 0 and 1.
    """

    def __init__(self) -> None:
        self._nodes: List[Any] = []
        self._mutex = threading.Lock()

    def register(self, node) -> int:
        with self._mutex:
            self._nodes.append(node)
            return len(self._nodes) - 1 + FIRST_HANDLE

    def __getitem__(self, handle: int):
        return self._nodes[handle - FIRST_HANDLE]

    def __len__(self) -> int:
        return len(self._nodes)


DEFAULT_REGISTRY = NodeRegistry()


class Lock:
    """Base for every lock in the package.

    Subclasses implement ``acquire_steps(ctx)`` and ``release_steps(ctx)`` as
    step generators (see :mod:`cnalock.atomics`).  ``ctx`` is the per-thread
    context returned by :meth:`new_context`: a queue node for MCS/CNA, a node
    pool for the word locks, ``None`` for the others.
    """

    kind = "abstract"

    def __init__(self) -> None:
        self._local = threading.local()
        self.pause: Optional[Callable[[], None]] = None

    def new_context(self, owner: Optional[int] = None):
        return None

    def acquire_steps(self, ctx) -> Steps:
        raise NotImplementedError

    def release_steps(self, ctx) -> Steps:
        raise NotImplementedError

    def acquire(self, ctx=None) -> None:
        run_blocking(self.acquire_steps(ctx if ctx is not None else self._thread_ctx()), self.pause)

    def release(self, ctx=None) -> None:
        run_blocking(self.release_steps(ctx if ctx is not None else self._thread_ctx()), self.pause)

    def _thread_ctx(self):
        try:
            return self._local.ctx
        except AttributeError:
            ctx = self._local.ctx = self.new_context(current_thread_id())
            return ctx

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.kind}>"
