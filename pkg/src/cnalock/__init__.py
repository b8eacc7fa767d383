"""NUMA-aware queue locks: CNA, its kernel-style word variant, and baselines.

>>> from cnalock import make_lock
>>> lock = make_lock("cna")
>>> with lock:
...     pass
"""

from .atomics import AtomicWord, cpu_relax, run_blocking
from .base import Lock, NodeRegistry
from .baseline import McsLock, McsNode, TasLock, TicketLock
from .cna import (
    AtomicOpCounter,
    CnaLock,
    CnaNode,
    FairnessPolicy,
    XorShift32,
    keep_lock_local,
    pseudo_rand,
)
from .topology import TopologyProvider, bind_thread
from .wordlock import LockWord32, NestingLimitError, NodePool, PoolRegistry, WordLock, decode_tail, encode_tail

LOCK_KINDS = ("cna", "cna-opt", "mcs", "tas", "ticket", "word-mcs", "word-cna")


def make_lock(kind: str, policy=None, topology=None, **kw) -> Lock:
    """Build a lock by its selection string (see ``LOCK_KINDS``)."""
    if kind == "cna":
        return CnaLock(policy=policy, topology=topology, **kw)
    if kind == "cna-opt":
        base = policy or FairnessPolicy()
        if not base.shuffle_reduction_enabled:
            base = FairnessPolicy(base.threshold, base.shuffle_threshold, True, base.prng_seed)
        return CnaLock(policy=base, topology=topology, **kw)
    if kind == "mcs":
        return McsLock(**kw)
    if kind == "tas":
        return TasLock(**kw)
    if kind == "ticket":
        return TicketLock()
    if kind in ("word-mcs", "word-cna"):
        return WordLock(kind.split("-")[1], policy=policy, topology=topology, **kw)
    raise ValueError(f"unknown lock kind {kind!r}; choose from {', '.join(LOCK_KINDS)}")


__all__ = [
    "AtomicOpCounter", "AtomicWord", "CnaLock", "CnaNode", "FairnessPolicy", "LOCK_KINDS", "Lock",
    "LockWord32", "McsLock", "McsNode", "NestingLimitError", "NodePool", "NodeRegistry", "PoolRegistry",
    "TasLock", "TicketLock", "TopologyProvider", "WordLock", "XorShift32", "bind_thread", "cpu_relax",
    "decode_tail", "encode_tail", "keep_lock_local", "make_lock", "pseudo_rand", "run_blocking",
]
