"""Socket (NUMA node) identification for the calling thread.

Two providers share one class: ``real`` asks the OS which CPU the thread is
on and maps it to a node via sysfs; ``mock`` looks the thread up in an
explicit ``thread -> socket`` table and is fully deterministic.

Threads are identified by a logical index when one has been bound with
:func:`bind_thread` (the benchmark and the simulator do this), otherwise by
``threading.get_ident()``.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import glob
import os
import re
import threading
from typing import Dict, Mapping, Optional

NOT_RECORDED = -1
DEFAULT_REFRESH_INTERVAL = 1024
ENV_MOCK = "CNA_MOCK_TOPOLOGY"

_thread_index = threading.local()


def bind_thread(index: int) -> None:
    """Give the calling thread a logical index used as its topology key."""
    _thread_index.value = index


def current_thread_id() -> int:
    index = getattr(_thread_index, "value", None)
    return threading.get_ident() if index is None else index


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


def os_node_map(sysfs_root: str = "/sys/devices/system/node") -> Dict[int, int]:
    """Return ``cpu -> node`` as reported by sysfs (empty if unavailable)."""
    mapping: Dict[int, int] = {}
    for path in glob.glob(os.path.join(sysfs_root, "node[0-9]*")):
        node = int(re.search(r"node(\d+)$", path).group(1))
        try:
            with open(os.path.join(path, "cpulist")) as fh:
                cpus = _parse_cpulist(fh.read())
        except OSError:
            continue
        for cpu in cpus:
            mapping[cpu] = node
    return mapping


def _load_sched_getcpu():
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
        fn = libc.sched_getcpu
    except (OSError, AttributeError):
        return None
    fn.restype = ctypes.c_int
    fn.argtypes = []
    return fn


class TopologyProvider:
    """Answers "which socket is the calling thread on?".

    In real mode the answer is cached per thread and refreshed every
    ``refresh_interval`` queries, so the hot path does not make a syscall.
    Mock mode is a plain table lookup and always reflects the latest table.
    """

    def __init__(
        self,
        mode: str = "mock",
        mock_map: Optional[Mapping[int, int]] = None,
        refresh_interval: int = DEFAULT_REFRESH_INTERVAL,
    ) -> None:
        if mode not in ("mock", "real"):
            raise ValueError(f"unknown topology mode {mode!r}")
        if refresh_interval < 1:
            raise ValueError("refresh_interval must be >= 1")
        self.mode = mode
        self.refresh_interval = refresh_interval
        self.degraded = False
        self._mock: Dict[int, int] = {}
        self._cache = threading.local()
        self._getcpu = None
        self._node_of_cpu: Dict[int, int] = {}
        if mode == "mock":
            self.set_mock_topology(mock_map or {})
        else:
            self._getcpu = _load_sched_getcpu()
            self._node_of_cpu = os_node_map()
            if self._getcpu is None or not self._node_of_cpu:
                self.degraded = True

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None) -> "TopologyProvider":
        """Mock provider from ``CNA_MOCK_TOPOLOGY="t0:0,t1:1"``, real otherwise."""
        env = os.environ if environ is None else environ
        spec = env.get(ENV_MOCK)
        if spec is None:
            return cls("real")
        return cls("mock", parse_mock_spec(spec))

    def set_mock_topology(self, mapping: Mapping[int, int]) -> None:
        if self.mode != "mock":
            raise RuntimeError("set_mock_topology requires a mock provider")
        table = {}
        for thread, socket in mapping.items():
            if socket < 0:
                raise ValueError(f"socket id for thread {thread} must be >= 0, got {socket}")
            table[thread] = int(socket)
        # rebinding the attribute is atomic for concurrent readers
        self._mock = table

    def current_numa_node(self, thread: Optional[int] = None) -> int:
        if self.mode == "mock":
            key = current_thread_id() if thread is None else thread
            return self._mock.get(key, 0)
        cache = self._cache
        remaining = getattr(cache, "remaining", 0)
        if remaining <= 0:
            cache.value = self._query_os()
            remaining = self.refresh_interval
        cache.remaining = remaining - 1
        return cache.value

    def _query_os(self) -> int:
        if self._getcpu is None or not self._node_of_cpu:
            self.degraded = True
            return 0
        cpu = self._getcpu()
        if cpu < 0:
            self.degraded = True
            return 0
        return self._node_of_cpu.get(cpu, 0)

    def socket_count(self) -> int:
        if self.mode == "mock":
            return len(set(self._mock.values())) or 1
        return len(set(self._node_of_cpu.values())) or 1

    def __repr__(self) -> str:
        if self.mode == "mock":
            return f"TopologyProvider(mock, {self._mock})"
        return f"TopologyProvider(real, sockets={self.socket_count()}, degraded={self.degraded})"


def parse_mock_spec(spec: str) -> Dict[int, int]:
    """Parse ``"t0:0,t1:1"`` (the ``t`` prefix is optional)."""
    table: Dict[int, int] = {}
    for item in spec.replace(" ", "").split(","):
        if not item:
            continue
        thread, _, socket = item.partition(":")
        if not socket:
            raise ValueError(f"bad topology entry {item!r}, expected t<thread>:<socket>")
        table[int(thread.lstrip("tT"))] = int(socket)
    return table
