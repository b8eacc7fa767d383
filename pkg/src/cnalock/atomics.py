"""Word-sized atomic cells and the busy-wait driver shared by every lock.

CPython exposes no hardware compare-and-swap, so read-modify-write
operations are serialized by a private mutex held for the duration of one
instruction. Plain loads skip the mutex; plain stores take it so that they
can never land in the middle of someone else's read-modify-write.

Lock algorithms in this package are written as generators.  A generator
yields ``None`` right before each shared-memory action and yields a
zero-argument predicate when it must busy-wait for a condition.  The same
generator is consumed by :func:`run_blocking` on real threads and stepped one
action at a time by :mod:`cnalock.sim`.
"""

from __future__ import annotations

import ctypes
import os
import threading
from typing import Callable, Generator, Optional

Steps = Generator[Optional[Callable[[], bool]], None, None]

WORD_BYTES = ctypes.sizeof(ctypes.c_void_p)


def _default_pause() -> None:
    # os.sched_yield drops the GIL and gives up the CPU; time.sleep(0) does
    # not reliably do the latter on a single core.
    os.sched_yield()


cpu_relax: Callable[[], None] = _default_pause if hasattr(os, "sched_yield") else (lambda: None)


def run_blocking(steps: Steps, pause: Callable[[], None] | None = None):
    """Drive a lock step generator to completion on the calling thread.

    Returns whatever the generator returns.
    """
    relax = pause or cpu_relax
    try:
        wait = next(steps)
        while True:
            if wait is not None:
                while not wait():
                    relax()
            wait = steps.send(None)
    except StopIteration as stop:
        return stop.value


class AtomicWord:
    """A fixed-width unsigned machine word with atomic RMW operations.

    ``ctype`` fixes the storage width; values wrap like the hardware word
    would.  ``nbytes`` reports the footprint of the shared state.
    """

    __slots__ = ("_cell", "_mutex")

    def __init__(self, value: int = 0, ctype=ctypes.c_size_t) -> None:
        self._cell = ctype(value)
        self._mutex = threading.Lock()

    @property
    def nbytes(self) -> int:
        return ctypes.sizeof(self._cell)

    def load(self) -> int:
        return self._cell.value

    def store(self, value: int) -> None:
        with self._mutex:
            self._cell.value = value

    def swap(self, value: int) -> int:
        with self._mutex:
            old = self._cell.value
            self._cell.value = value
        return old

    def cas(self, expected: int, new: int) -> int:
        """Compare-and-swap; returns the value observed (== expected on success)."""
        with self._mutex:
            old = self._cell.value
            if old == expected:
                self._cell.value = new
        return old

    def fetch_add(self, delta: int) -> int:
        with self._mutex:
            old = self._cell.value
            self._cell.value = old + delta
        return old

    def fetch_or(self, bits: int) -> int:
        with self._mutex:
            old = self._cell.value
            self._cell.value = old | bits
        return old

    def fetch_and(self, bits: int) -> int:
        with self._mutex:
            old = self._cell.value
            self._cell.value = old & bits
        return old

    def store_masked(self, mask: int, value: int) -> None:
        """Store into the bits selected by ``mask`` only.

        Models a narrow (byte or halfword) plain store: the hardware never
        clobbers neighbouring bytes of the word.
        """
        with self._mutex:
            self._cell.value = (self._cell.value & ~mask) | (value & mask)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._cell.value:#x}, {self.nbytes} bytes)"
